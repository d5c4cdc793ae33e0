#include "hfmm/parallel_interp.hpp"

#include <cmath>
#include <stdexcept>

namespace hfmm {

std::vector<std::size_t> even_splits(std::size_t total, std::size_t parts) {
  std::vector<std::size_t> s(parts + 1, 0);
  for (std::size_t i = 0; i < parts; ++i)
    s[i + 1] = s[i] + total / parts + (i < total % parts ? 1 : 0);
  return s;
}

namespace {

// Source row feeding entry i of a folded great-circle column (0 <= i < 2*nt).
inline std::size_t fold_row(std::size_t i, std::size_t nt) {
  return i < nt ? i : 2 * nt - 1 - i;
}
// Source phi index feeding entry i of folded column p (C = n_phi/2 circles).
inline std::size_t fold_col(std::size_t i, std::size_t nt, std::size_t p,
                            std::size_t C) {
  return i < nt ? p : p + C;
}

void check_layout(const ColumnLayout& l, std::size_t parts, const char* who) {
  if (l.splits.size() != parts + 1 || l.splits.front() != 0 ||
      l.splits.back() != l.n_theta || l.n_phi % 2 != 0)
    throw std::invalid_argument(std::string(who) + ": malformed column layout");
  for (std::size_t i = 0; i + 1 < l.splits.size(); ++i)
    if (l.splits[i] > l.splits[i + 1])
      throw std::invalid_argument(std::string(who) + ": splits not monotone");
}

// Scatters theta-row blocks of an nt x np grid into folded great-circle
// columns distributed by fold_splits. `rows` holds this participant's rows
// [row_splits[me], row_splits[me+1]) at width np. Returns this participant's
// folded columns, each of length 2*nt. Sender and receiver enumerate the
// moved entries identically: folded column index ascending, entry ascending.
std::vector<cplx> exchange_rows_to_folded(
    std::span<const cplx> rows, std::size_t nt, std::size_t np,
    const std::vector<std::size_t>& row_splits,
    const std::vector<std::size_t>& fold_splits, const std::vector<int>& ranks,
    std::size_t me, Endpoint& ep, int tag) {
  std::size_t R = ranks.size(), C = np / 2;
  std::size_t a = row_splits[me], b = row_splits[me + 1];
  auto gather = [&](std::size_t f0, std::size_t f1) {
    std::vector<cplx> buf;
    buf.reserve((f1 - f0) * 2 * (b - a));
    for (std::size_t p = f0; p < f1; ++p)
      for (std::size_t i = 0; i < 2 * nt; ++i) {
        std::size_t r = fold_row(i, nt);
        if (r >= a && r < b) buf.push_back(rows[(r - a) * np + fold_col(i, nt, p, C)]);
      }
    return buf;
  };
  std::size_t f0 = fold_splits[me], f1 = fold_splits[me + 1];
  for (std::size_t q = 0; q < R; ++q) {
    if (q == me) continue;
    auto buf = gather(fold_splits[q], fold_splits[q + 1]);
    if (!buf.empty()) ep.isend(ranks[q], tag, pack_cplx(buf));
  }
  std::vector<cplx> folded((f1 - f0) * 2 * nt);
  auto deposit = [&](std::size_t ra, std::size_t rb,
                     std::span<const cplx> buf) {
    std::size_t k = 0;
    for (std::size_t p = f0; p < f1; ++p)
      for (std::size_t i = 0; i < 2 * nt; ++i) {
        std::size_t r = fold_row(i, nt);
        if (r >= ra && r < rb) folded[(p - f0) * 2 * nt + i] = buf[k++];
      }
  };
  deposit(a, b, gather(f0, f1));
  for (std::size_t q = 0; q < R; ++q) {
    if (q == me) continue;
    std::size_t ra = row_splits[q], rb = row_splits[q + 1];
    if ((f1 - f0) * (rb - ra) == 0) continue;
    auto bytes = ep.recv(ranks[q], tag);
    std::vector<cplx> buf(bytes.size() / sizeof(cplx));
    unpack_cplx(bytes, buf);
    deposit(ra, rb, buf);
  }
  return folded;
}

// Reverse of exchange_rows_to_folded: scatters folded columns (length 2*nt
// each, distributed by fold_splits) back into theta-row blocks of width np
// distributed by row_splits. Same enumeration order per pair, so each message
// here mirrors one message of the forward exchange with identical size.
std::vector<cplx> exchange_folded_to_rows(
    std::span<const cplx> folded, std::size_t nt, std::size_t np,
    const std::vector<std::size_t>& fold_splits,
    const std::vector<std::size_t>& row_splits, const std::vector<int>& ranks,
    std::size_t me, Endpoint& ep, int tag) {
  std::size_t R = ranks.size(), C = np / 2;
  std::size_t f0 = fold_splits[me], f1 = fold_splits[me + 1];
  auto gather = [&](std::size_t ra, std::size_t rb) {
    std::vector<cplx> buf;
    buf.reserve((f1 - f0) * 2 * (rb - ra));
    for (std::size_t p = f0; p < f1; ++p)
      for (std::size_t i = 0; i < 2 * nt; ++i) {
        std::size_t r = fold_row(i, nt);
        if (r >= ra && r < rb) buf.push_back(folded[(p - f0) * 2 * nt + i]);
      }
    return buf;
  };
  std::size_t a = row_splits[me], b = row_splits[me + 1];
  for (std::size_t q = 0; q < R; ++q) {
    if (q == me) continue;
    auto buf = gather(row_splits[q], row_splits[q + 1]);
    if (!buf.empty()) ep.isend(ranks[q], tag, pack_cplx(buf));
  }
  std::vector<cplx> rows((b - a) * np);
  auto deposit = [&](std::size_t g0, std::size_t g1,
                     std::span<const cplx> buf) {
    std::size_t k = 0;
    for (std::size_t p = g0; p < g1; ++p)
      for (std::size_t i = 0; i < 2 * nt; ++i) {
        std::size_t r = fold_row(i, nt);
        if (r >= a && r < b)
          rows[(r - a) * np + fold_col(i, nt, p, C)] = buf[k++];
      }
  };
  deposit(f0, f1, gather(a, b));
  for (std::size_t q = 0; q < R; ++q) {
    if (q == me) continue;
    std::size_t g0 = fold_splits[q], g1 = fold_splits[q + 1];
    if ((g1 - g0) * (b - a) == 0) continue;
    auto bytes = ep.recv(ranks[q], tag);
    std::vector<cplx> buf(bytes.size() / sizeof(cplx));
    unpack_cplx(bytes, buf);
    deposit(g0, g1, buf);
  }
  return rows;
}

void common_checks(const ColumnLayout& src, std::span<const cplx> my_cols,
                   const ColumnLayout& dst, const std::vector<int>& ranks,
                   std::size_t my_index, const char* who) {
  check_layout(src, ranks.size(), who);
  check_layout(dst, ranks.size(), who);
  if (my_index >= ranks.size())
    throw std::invalid_argument(std::string(who) + ": bad participant index");
  if (my_cols.size() != src.samples(my_index))
    throw std::invalid_argument(std::string(who) + ": column block size");
}

}  // namespace

std::vector<cplx> parallel_interpolate(const ColumnLayout& src,
                                       std::span<const cplx> my_cols,
                                       const ColumnLayout& dst,
                                       const std::vector<int>& ranks,
                                       std::size_t my_index, Endpoint& ep,
                                       int base_tag) {
  common_checks(src, my_cols, dst, ranks, my_index, "parallel_interpolate");
  if (dst.n_theta < src.n_theta || dst.n_phi < src.n_phi)
    throw std::invalid_argument("parallel_interpolate: dst smaller than src");

  std::size_t my_rows = src.cols(my_index);
  std::vector<cplx> widened(my_rows * dst.n_phi);
  for (std::size_t r = 0; r < my_rows; ++r)
    resample_circle({&my_cols[r * src.n_phi], src.n_phi}, src.n_phi, 0.0,
                    {&widened[r * dst.n_phi], dst.n_phi}, dst.n_phi, 0.0);
  ep.add_flops(std::uint64_t(
      double(my_rows) * (fft_flops(src.n_phi) + fft_flops(dst.n_phi))));

  auto fold_splits = even_splits(dst.n_phi / 2, ranks.size());
  auto folded =
      exchange_rows_to_folded(widened, src.n_theta, dst.n_phi, src.splits,
                              fold_splits, ranks, my_index, ep, base_tag);

  std::size_t my_circles = fold_splits[my_index + 1] - fold_splits[my_index];
  std::vector<cplx> tall(my_circles * 2 * dst.n_theta);
  for (std::size_t p = 0; p < my_circles; ++p)
    resample_circle({&folded[p * 2 * src.n_theta], 2 * src.n_theta},
                    2 * src.n_theta, 0.5,
                    {&tall[p * 2 * dst.n_theta], 2 * dst.n_theta},
                    2 * dst.n_theta, 0.5);
  ep.add_flops(std::uint64_t(double(my_circles) * (fft_flops(2 * src.n_theta) +
                                                   fft_flops(2 * dst.n_theta))));

  return exchange_folded_to_rows(tall, dst.n_theta, dst.n_phi, fold_splits,
                                 dst.splits, ranks, my_index, ep, base_tag + 1);
}

std::vector<cplx> parallel_anterpolate(const ColumnLayout& src,
                                       std::span<const cplx> my_cols,
                                       const ColumnLayout& dst,
                                       const std::vector<int>& ranks,
                                       std::size_t my_index, Endpoint& ep,
                                       int base_tag) {
  common_checks(src, my_cols, dst, ranks, my_index, "parallel_anterpolate");
  if (dst.n_theta > src.n_theta || dst.n_phi > src.n_phi)
    throw std::invalid_argument("parallel_anterpolate: dst larger than src");

  auto fold_splits = even_splits(src.n_phi / 2, ranks.size());
  auto folded =
      exchange_rows_to_folded(my_cols, src.n_theta, src.n_phi, src.splits,
                              fold_splits, ranks, my_index, ep, base_tag);

  std::size_t my_circles = fold_splits[my_index + 1] - fold_splits[my_index];
  std::vector<cplx> shortened(my_circles * 2 * dst.n_theta);
  for (std::size_t p = 0; p < my_circles; ++p)
    resample_circle({&folded[p * 2 * src.n_theta], 2 * src.n_theta},
                    2 * src.n_theta, 0.5,
                    {&shortened[p * 2 * dst.n_theta], 2 * dst.n_theta},
                    2 * dst.n_theta, 0.5);
  ep.add_flops(std::uint64_t(double(my_circles) * (fft_flops(2 * src.n_theta) +
                                                   fft_flops(2 * dst.n_theta))));

  // Unfold back to rows still at the source phi width, then narrow locally.
  auto wide_rows =
      exchange_folded_to_rows(shortened, dst.n_theta, src.n_phi, fold_splits,
                              dst.splits, ranks, my_index, ep, base_tag + 1);

  std::size_t my_rows = dst.cols(my_index);
  std::vector<cplx> out(my_rows * dst.n_phi);
  for (std::size_t r = 0; r < my_rows; ++r)
    resample_circle({&wide_rows[r * src.n_phi], src.n_phi}, src.n_phi, 0.0,
                    {&out[r * dst.n_phi], dst.n_phi}, dst.n_phi, 0.0);
  ep.add_flops(std::uint64_t(
      double(my_rows) * (fft_flops(src.n_phi) + fft_flops(dst.n_phi))));
  return out;
}

}  // namespace hfmm
