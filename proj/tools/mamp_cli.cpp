#include "mamp/harness.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace mamp;

namespace {

struct Globals {
  std::string config;
  std::string out;
  std::int64_t seed = -1;
  bool extended = false;
  int threads = 1;
};

ExperimentConfig resolve(const Globals& g, ExperimentKind kind) {
  ExperimentConfig c;
  if (g.extended && kind == ExperimentKind::ber_sweep) c = extended_ber_config();
  if (!g.config.empty()) c = load_config(g.config);
  c.kind = kind;
  if (g.extended && kind != ExperimentKind::ber_sweep && c.code != "uncoded") c.code_length = 100000;
  if (g.seed >= 0) {
    const size_t n = c.seeds.size();
    c.seeds.clear();
    for (size_t i = 0; i < n; ++i) c.seeds.push_back(static_cast<std::uint64_t>(g.seed) + i);
  }
  if (!g.out.empty()) c.out = g.out;
  c.threads = g.threads;
  c.validate();
  return c;
}

void report(const ResultRecord& r, const std::string& out) {
  write_result(r, out);
  std::cout << r.to_json().dump(2) << '\n';
  for (const auto& e : r.errors) std::cerr << "warning: " << e << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MAMP receiver simulator"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory for JSON/CSV results");
  app.add_option("--seed", g.seed, "first seed; the configured seed count is kept");
  app.add_flag("--extended", g.extended, "full-scale settings (codeword 1e5; runs take hours)");
  app.add_option("--threads", g.threads, "worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);

  ChannelSpec ch;
  std::string family = "rayleigh";
  bool exact_kappa = false;
  int tau = 120;
  auto* gen = app.add_subcommand("gen-channel", "generate a channel and write its spectral profile");
  gen->add_option("--family", family, "rayleigh | ill | kron");
  gen->add_option("--M", ch.M, "receive antennas")->required();
  gen->add_option("--N", ch.N, "transmit antennas")->required();
  gen->add_option("--kappa", ch.kappa, "condition number (ill)");
  gen->add_option("--alpha", ch.alpha, "correlation coefficient (kron)");
  gen->add_flag("--exact-kappa", exact_kappa, "singular-value ratio exactly kappa");
  gen->add_option("--tau", tau, "power-iteration depth for the eigenvalue bound");

  const std::vector<std::pair<std::string, ExperimentKind>> verbs = {
      {"ber", ExperimentKind::ber_sweep},
      {"se-track", ExperimentKind::se_tracking},
      {"rate", ExperimentKind::rate_curve},
      {"damping", ExperimentKind::damping_compare},
      {"eigbound", ExperimentKind::eigbound_compare},
      {"curve-match", ExperimentKind::curve_match}};
  std::vector<CLI::App*> verb_cmds;
  for (auto& [name, kind] : verbs)
    verb_cmds.push_back(app.add_subcommand(name, "run the " + to_string(kind) + " experiment"));

  ComplexityInput cx;
  std::string cx_code;
  int cx_bp = 30, cx_probes = 4, cx_len = 0;
  auto* cplx = app.add_subcommand("complexity", "analytic operation counts, MAMP vs OAMP/VAMP");
  cplx->add_option("--M", cx.M);
  cplx->add_option("--N", cx.N);
  cplx->add_option("--T", cx.T, "iterations");
  cplx->add_option("--slots", cx.slots, "transmit slots per frame (end-to-end model)");
  cplx->add_option("--code", cx_code, "code table id for the decoder cost (end-to-end model)");
  cplx->add_option("--code-length", cx_len, "codeword length for the decoder cost");
  cplx->add_option("--bp-iters", cx_bp);
  cplx->add_option("--probes", cx_probes);

  try {
    CLI11_PARSE(app, argc, argv);
    if (gen->parsed()) {
      ch.family = family_from_string(family);
      ch.seed = g.seed >= 0 ? static_cast<std::uint64_t>(g.seed) : 1;
      ch.convention = exact_kappa ? KappaConvention::exact_condition : KappaConvention::per_rank;
      const ChannelMatrix A = generate(ch);
      const SpectralProfile p = spectral_profile(A);
      const EigBoundEstimate eb = eig_bound_approx(A, tau, derive_seed(ch.seed, 0xEB));
      nlohmann::json j = {{"channel", ch},
                          {"trace_norm", A.trace_norm()},
                          {"lambda_min", p.lambda_min()},
                          {"lambda_max", p.lambda_max()},
                          {"lambda_max_bound", eb.lambda_max_up},
                          {"tau", tau},
                          {"moments", {p.moment(1), p.moment(2), p.moment(3)}}};
      if (!g.out.empty()) {
        std::filesystem::create_directories(g.out);
        std::ofstream os(std::filesystem::path(g.out) / "profile.csv");
        p.write_csv(os);
        std::ofstream(std::filesystem::path(g.out) / "channel.json") << j.dump(2) << '\n';
      }
      std::cout << j.dump(2) << '\n';
      return 0;
    }
    if (cplx->parsed()) {
      cx.nld_ops = 0;
      if (!cx_code.empty()) {
        ExperimentConfig c;
        if (!g.config.empty()) c = load_config(g.config);
        c.code = cx_code;
        if (g.extended) c.code_length = 100000;
        if (cx_len > 0) c.code_length = cx_len;
        cx.nld_ops = decoder_ops(*build_config_code(c), cx_bp, cx_probes);
      }
      const ComplexityReport r = complexity_report(cx);
      std::cout << nlohmann::json{{"M", cx.M},
                                  {"N", cx.N},
                                  {"T", cx.T},
                                  {"mamp_ops", r.mamp_ops},
                                  {"oamp_ops", r.oamp_ops},
                                  {"ratio", r.ratio},
                                  {"mamp_ops_e2e", r.mamp_e2e},
                                  {"oamp_ops_e2e", r.oamp_e2e},
                                  {"ratio_e2e", r.ratio_e2e}}
                       .dump(2)
                << '\n';
      return 0;
    }
    for (size_t i = 0; i < verbs.size(); ++i) {
      if (!verb_cmds[i]->parsed()) continue;
      const ExperimentConfig c = resolve(g, verbs[i].second);
      report(run_experiment(c), c.out);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
