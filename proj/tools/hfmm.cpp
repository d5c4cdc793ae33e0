// Command-line front end: geometry generation, oracle verification, and
// scaling studies with report tables.
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hfmm/bench.hpp"
#include "hfmm/kernel.hpp"
#include "hfmm/traversal.hpp"

namespace {

using nlohmann::json;

hfmm::GeometrySpec parse_geometry(const std::string& text) {
  // "kind:extent:spacing", e.g. "grid:8:0.25"; extent/spacing in wavelengths.
  std::istringstream s(text);
  std::string kind, extent, spacing;
  if (!std::getline(s, kind, ':') || !std::getline(s, extent, ':') ||
      !std::getline(s, spacing, ':'))
    throw CLI::ValidationError("--geometry", "expected kind:extent:spacing");
  hfmm::GeometrySpec g;
  if (kind == "grid")
    g.kind = hfmm::GeometryKind::PlanarGrid;
  else if (kind == "sphere")
    g.kind = hfmm::GeometryKind::SphereSurface;
  else if (kind == "volume")
    g.kind = hfmm::GeometryKind::CubicVolume;
  else
    throw CLI::ValidationError("--geometry",
                               "kind must be grid, sphere, or volume");
  g.extent = std::stod(extent);
  g.spacing = std::stod(spacing);
  g.validate();
  return g;
}

hfmm::AlignPolicy parse_policy(const std::string& text) {
  if (text == "aligned") return hfmm::AlignPolicy::Aligned;
  if (text == "rank-ordered" || text == "rank_ordered")
    return hfmm::AlignPolicy::RankOrdered;
  throw CLI::ValidationError("--alignment",
                             "must be aligned or rank-ordered");
}

hfmm::SchedulerKind parse_scheduler(const std::string& text) {
  if (text == "deterministic") return hfmm::SchedulerKind::Deterministic;
  if (text == "adversarial") return hfmm::SchedulerKind::Adversarial;
  if (text == "threaded") return hfmm::SchedulerKind::Threaded;
  throw CLI::ValidationError(
      "--scheduler", "must be deterministic, adversarial, or threaded");
}

int cmd_gen(const std::string& geometry, double lambda, std::uint64_t seed,
            bool unit_intensity, const std::string& output) {
  hfmm::GeometrySpec g = parse_geometry(geometry);
  auto particles = hfmm::generate_geometry(
      g, lambda,
      unit_intensity ? hfmm::IntensityRule::Unit
                     : hfmm::IntensityRule::RandomSeeded,
      seed);
  std::ostringstream header;
  header << geometry << " lambda=" << lambda << " seed=" << seed
         << " count=" << particles.size();
  hfmm::write_particles(output, particles, header.str());
  std::cout << "wrote " << particles.size() << " particles to " << output
            << "\n";
  return 0;
}

int cmd_verify(const std::string& input, const hfmm::RunConfig& cfg,
               bool force) {
  auto particles = hfmm::read_particles(input);
  if (particles.size() > 50000 && !force) {
    std::cerr << "verify: " << particles.size()
              << " particles exceeds the O(N^2) oracle guard of 50000; "
                 "pass --force to run anyway\n";
    return 2;
  }
  hfmm::EvalResult res = hfmm::evaluate_potential(particles, cfg);
  std::vector<hfmm::Vec3> obs;
  for (const auto& p : particles) obs.push_back(p.position);
  std::vector<hfmm::cplx> exact = hfmm::direct_potential(
      particles, obs, hfmm::Wavenumber::from_lambda(cfg.lambda));
  double num = 0, den = 0, max_rel = 0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    double e = std::abs(res.potentials[i] - exact[i]);
    double m = std::abs(exact[i]);
    num += e * e;
    den += m * m;
    if (m > 0) max_rel = std::max(max_rel, e / m);
  }
  double rms = den > 0 ? std::sqrt(num / den) : 0.0;
  std::printf("relative RMS error: %.6e\n", rms);
  std::printf("max relative error: %.6e\n", max_rel);
  return 0;
}

int cmd_scale(const std::string& config_path, hfmm::StudySpec spec,
              const std::vector<std::string>& geometry_flags,
              const std::vector<int>& rank_flags,
              const std::vector<std::string>& policy_flags) {
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw std::runtime_error("scale: cannot open " + config_path);
    json j = json::parse(f);
    for (const auto& g : j.value("geometries", json::array())) {
      hfmm::GeometrySpec spec_g = parse_geometry(
          g.at("kind").get<std::string>() + ":" +
          std::to_string(g.at("extent").get<double>()) + ":" +
          std::to_string(g.at("spacing").get<double>()));
      spec.geometries.push_back(spec_g);
    }
    if (j.contains("ranks")) spec.ranks = j["ranks"].get<std::vector<int>>();
    spec.lambda = j.value("lambda", spec.lambda);
    spec.digits = j.value("digits", spec.digits);
    spec.buffer_bytes = j.value("buffer_bytes", spec.buffer_bytes);
    spec.seed = j.value("seed", spec.seed);
    spec.output_dir = j.value("output_dir", spec.output_dir);
    if (j.contains("policies")) {
      spec.policies.clear();
      for (const auto& p : j["policies"])
        spec.policies.push_back(parse_policy(p.get<std::string>()));
    }
  }
  // Command-line sweeps override the config file.
  if (!geometry_flags.empty()) {
    spec.geometries.clear();
    for (const auto& g : geometry_flags)
      spec.geometries.push_back(parse_geometry(g));
  }
  if (!rank_flags.empty()) spec.ranks = rank_flags;
  if (!policy_flags.empty()) {
    spec.policies.clear();
    for (const auto& p : policy_flags) spec.policies.push_back(parse_policy(p));
  }
  hfmm::Report report = hfmm::run_study(spec);
  hfmm::write_report(report, spec.output_dir);
  int failures = 0;
  for (const auto& r : report.runs)
    if (!r.ok) {
      ++failures;
      std::cerr << "cell failed: " << r.run_id << ": " << r.error << "\n";
    }
  std::cout << "study: " << report.runs.size() - failures << "/"
            << report.runs.size() << " cells ok; report in " << spec.output_dir
            << "\n";
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Helmholtz fast-multipole evaluation engine"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "generate a particle geometry file");
  std::string gen_geometry = "grid:8:0.25", gen_output;
  double gen_lambda = 1.0;
  std::uint64_t gen_seed = 0;
  bool gen_unit = false;
  gen->add_option("--geometry", gen_geometry, "kind:extent:spacing (in lambda)");
  gen->add_option("--lambda", gen_lambda, "wavelength in meters");
  gen->add_option("--seed", gen_seed, "intensity RNG seed");
  gen->add_flag("--unit-intensity", gen_unit, "all intensities 1+0j");
  gen->add_option("output", gen_output, "output particle file")->required();

  // verify
  auto* verify = app.add_subcommand(
      "verify", "compare evaluate_potential against the direct oracle");
  std::string verify_input, verify_alignment = "aligned",
              verify_scheduler = "deterministic";
  hfmm::RunConfig verify_cfg;
  bool verify_force = false;
  verify->add_option("input", verify_input, "particle file")->required();
  verify->add_option("--lambda", verify_cfg.lambda, "wavelength in meters");
  verify->add_option("--digits", verify_cfg.digits, "accuracy digits");
  verify->add_option("--leaf", verify_cfg.leaf_lambda,
                     "leaf box side in wavelengths");
  verify->add_option("--ranks", verify_cfg.num_ranks, "logical rank count");
  verify->add_option("--buffer-bytes", verify_cfg.buffer_limit,
                     "communication buffer cap M_S in bytes");
  verify->add_option("--alignment", verify_alignment,
                     "slice policy: aligned | rank-ordered");
  verify->add_option("--seed", verify_cfg.seed, "scheduler seed");
  verify->add_option("--scheduler", verify_scheduler,
                     "deterministic | adversarial | threaded");
  verify->add_flag("--force", verify_force, "bypass the oracle size guard");

  // scale
  auto* scale = app.add_subcommand("scale", "run a scaling study");
  std::string scale_config, scale_out = "report", scale_scheduler;
  std::vector<std::string> scale_geometries, scale_policies;
  std::vector<int> scale_ranks;
  hfmm::StudySpec study;
  scale->add_option("--config", scale_config, "study JSON file");
  scale->add_option("--geometry", scale_geometries,
                    "geometry sweep entries kind:extent:spacing");
  scale->add_option("--ranks", scale_ranks, "rank sweep");
  scale->add_option("--lambda", study.lambda, "wavelength in meters");
  scale->add_option("--digits", study.digits, "accuracy digits");
  scale->add_option("--buffer-bytes", study.buffer_bytes,
                    "communication buffer cap M_S in bytes");
  scale->add_option("--alignment", scale_policies,
                    "policies to compare: aligned | rank-ordered");
  scale->add_option("--seed", study.seed, "RNG seed");
  scale->add_option("--out", scale_out, "report output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen(gen_geometry, gen_lambda, gen_seed, gen_unit, gen_output);
    if (verify->parsed()) {
      verify_cfg.policy = parse_policy(verify_alignment);
      verify_cfg.scheduler = parse_scheduler(verify_scheduler);
      return cmd_verify(verify_input, verify_cfg, verify_force);
    }
    if (scale->parsed()) {
      study.output_dir = scale_out;
      return cmd_scale(scale_config, study, scale_geometries, scale_ranks,
                       scale_policies);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
