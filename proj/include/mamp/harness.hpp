#pragma once

#include "mamp/analysis.hpp"
#include "mamp/channel.hpp"
#include "mamp/ldpc.hpp"
#include "mamp/nld.hpp"
#include "mamp/receiver.hpp"
#include "mamp/se.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace mamp {

enum class ExperimentKind { ber_sweep, se_tracking, rate_curve, damping_compare, eigbound_compare, curve_match };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::ber_sweep: return "ber_sweep";
    case ExperimentKind::se_tracking: return "se_tracking";
    case ExperimentKind::rate_curve: return "rate_curve";
    case ExperimentKind::damping_compare: return "damping_compare";
    case ExperimentKind::eigbound_compare: return "eigbound_compare";
    case ExperimentKind::curve_match: return "curve_match";
  }
  return "?";
}

inline ExperimentKind experiment_from_string(const std::string& s) {
  for (auto k : {ExperimentKind::ber_sweep, ExperimentKind::se_tracking, ExperimentKind::rate_curve,
                 ExperimentKind::damping_compare, ExperimentKind::eigbound_compare, ExperimentKind::curve_match})
    if (to_string(k) == s) return k;
  throw invalid_argument("unknown experiment kind '" + s + "'");
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::ber_sweep;
  ChannelSpec channel;
  std::vector<double> snr_db{8.0};
  std::string constellation = "qpsk";
  std::string code = "uncoded";  // code table id, "regular_3_6", or "uncoded"
  int code_length = 20000;
  int slots = 1;  // uncoded frames: transmit slots per channel use
  std::string code_tables;  // empty: the shipped tables
  int bp_iters = 30;
  int probes = 4;
  ReceiverConfig receiver;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::string out;
  int threads = 1;
  // experiment-specific
  double target_ber = 2e-4;             // damping_compare
  std::vector<double> kappas{10, 50};   // damping_compare
  std::vector<int> taus{120};           // eigbound_compare
  int se_samples = 5000;                // se_tracking
  int curve_points = 24;                // curve_match
  int curve_blocks = 40;                // curve_match
  int curve_bp_iters = 100;             // curve_match

  void validate() const {
    require(!snr_db.empty(), "snr list must be nonempty");
    require(!seeds.empty(), "seed list must be nonempty");
    require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "seeds must be distinct");
    require(code_length > 0 && bp_iters > 0 && probes >= 1, "code settings must be positive");
    require(slots >= 1, "slots must be >= 1");
    require(threads >= 0, "threads must be >= 0");
    require(!kappas.empty() && !taus.empty(), "kappa and tau lists must be nonempty");
  }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"kind", to_string(c.kind)},
       {"channel", c.channel},
       {"snr_db", c.snr_db},
       {"constellation", c.constellation},
       {"code", c.code},
       {"code_length", c.code_length},
       {"slots", c.slots},
       {"code_tables", c.code_tables},
       {"bp_iters", c.bp_iters},
       {"probes", c.probes},
       {"receiver", c.receiver},
       {"seeds", c.seeds},
       {"out", c.out},
       {"threads", c.threads},
       {"target_ber", c.target_ber},
       {"kappas", c.kappas},
       {"taus", c.taus},
       {"se_samples", c.se_samples},
       {"curve_points", c.curve_points},
       {"curve_blocks", c.curve_blocks},
       {"curve_bp_iters", c.curve_bp_iters}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  if (j.contains("kind")) c.kind = experiment_from_string(j.at("kind").get<std::string>());
  if (j.contains("channel")) c.channel = j.at("channel").get<ChannelSpec>();
  if (j.contains("snr_db")) c.snr_db = j.at("snr_db").get<std::vector<double>>();
  if (j.contains("receiver")) c.receiver = j.at("receiver").get<ReceiverConfig>();
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.constellation = j.value("constellation", c.constellation);
  c.code = j.value("code", c.code);
  c.code_length = j.value("code_length", c.code_length);
  c.slots = j.value("slots", c.slots);
  c.code_tables = j.value("code_tables", c.code_tables);
  c.bp_iters = j.value("bp_iters", c.bp_iters);
  c.probes = j.value("probes", c.probes);
  c.out = j.value("out", c.out);
  c.threads = j.value("threads", c.threads);
  c.target_ber = j.value("target_ber", c.target_ber);
  if (j.contains("kappas")) c.kappas = j.at("kappas").get<std::vector<double>>();
  if (j.contains("taus")) c.taus = j.at("taus").get<std::vector<int>>();
  c.se_samples = j.value("se_samples", c.se_samples);
  c.curve_points = j.value("curve_points", c.curve_points);
  c.curve_blocks = j.value("curve_blocks", c.curve_blocks);
  c.curve_bp_iters = j.value("curve_bp_iters", c.curve_bp_iters);
  c.validate();
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open config file '" + path + "'");
  return nlohmann::json::parse(in).get<ExperimentConfig>();
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Hash of the canonical (sorted-key) JSON form; the output path and thread
// count do not affect results and are left out.
inline std::string config_hash(const ExperimentConfig& c) {
  nlohmann::json j = c;
  j.erase("out");
  j.erase("threads");
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(j.dump());
  return os.str();
}

struct WilsonInterval {
  double lo = 0, hi = 1;
};

inline WilsonInterval wilson(long k, long n, double z = 1.96) {
  if (n <= 0) return {};
  const double nn = static_cast<double>(n), p = static_cast<double>(k) / nn, z2 = z * z;
  const double c = (p + z2 / (2 * nn)) / (1 + z2 / nn);
  const double h = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / (1 + z2 / nn);
  return {std::max(0.0, c - h), std::min(1.0, c + h)};
}

struct ResultRecord {
  std::string experiment_id;
  std::string config_hash;
  nlohmann::json config;
  nlohmann::json points = nlohmann::json::array();  // aggregate per-point metrics
  nlohmann::json raw = nlohmann::json::array();     // per-seed rows
  std::vector<std::string> errors;                  // logged per-point failures
  double wall_time_s = 0;
  std::string version = kVersion;

  nlohmann::json to_json() const {
    return {{"experiment_id", experiment_id}, {"config_hash", config_hash}, {"config", config},
            {"points", points},               {"errors", errors},           {"wall_time_s", wall_time_s},
            {"version", version}};
  }
};

// Rows of a JSON array of flat objects as CSV, columns from the first row.
inline void write_rows_csv(std::ostream& os, const nlohmann::json& rows) {
  if (rows.empty()) return;
  std::vector<std::string> cols;
  for (auto& [k, v] : rows.front().items()) cols.push_back(k);
  for (size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (auto& r : rows) {
    for (size_t i = 0; i < cols.size(); ++i) {
      const auto& v = r.contains(cols[i]) ? r.at(cols[i]) : nlohmann::json();
      os << (i ? "," : "");
      if (v.is_string()) os << v.get<std::string>();
      else if (!v.is_null()) os << v.dump();
    }
    os << '\n';
  }
}

// <dir>/<id>.json summary plus <id>_points.csv and <id>_raw.csv.
inline void write_result(const ResultRecord& r, const std::string& dir) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  const std::filesystem::path base = std::filesystem::path(dir) / r.experiment_id;
  std::ofstream(base.string() + ".json") << r.to_json().dump(2) << '\n';
  std::ofstream pts(base.string() + "_points.csv");
  write_rows_csv(pts, r.points);
  std::ofstream raw(base.string() + "_raw.csv");
  write_rows_csv(raw, r.raw);
}

namespace detail {

inline ResultRecord start_record(const ExperimentConfig& cfg) {
  cfg.validate();
  ResultRecord r;
  r.config = cfg;
  r.config_hash = config_hash(cfg);
  r.experiment_id = to_string(cfg.kind) + "_" + r.config_hash.substr(0, 8);
  return r;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline ChannelSpec channel_for_seed(const ChannelSpec& base, std::uint64_t seed) {
  ChannelSpec s = base;
  s.seed = derive_seed(base.seed, seed);
  return s;
}

}  // namespace detail

inline std::string shipped_code_tables() {
#ifdef MAMP_DATA_DIR
  return std::string(MAMP_DATA_DIR) + "/ldpc_tables.json";
#else
  return "data/ldpc_tables.json";
#endif
}

// Builds the code named by cfg.code at cfg.code_length (nullptr if uncoded).
inline std::shared_ptr<const LdpcCode> build_config_code(const ExperimentConfig& cfg, std::uint64_t seed = 1) {
  if (cfg.code == "uncoded") return nullptr;
  if (cfg.code == "regular_3_6") return std::make_shared<LdpcCode>(regular_code(3, 6, cfg.code_length, seed));
  const CodeTableEntry e = find_code(load_code_tables(cfg.code_tables.empty() ? shipped_code_tables() : cfg.code_tables), cfg.code);
  return std::make_shared<LdpcCode>(build_ldpc(e.lambda, e.mu, cfg.code_length, seed));
}

inline std::unique_ptr<Denoiser> make_denoiser(const ExperimentConfig& cfg, std::shared_ptr<const LdpcCode> code) {
  const Constellation cons = Constellation::by_name(cfg.constellation);
  if (!code) return std::make_unique<UncodedDenoiser>(cons);
  return std::make_unique<CodedDenoiser>(std::move(code), cons, cfg.bp_iters, cfg.probes);
}

struct BerPoint {
  double snr_db = 0;
  long bit_errors = 0, bits = 0, frame_errors = 0, frames = 0;
  double mean_iterations = 0;
  double ber() const { return bits ? static_cast<double>(bit_errors) / static_cast<double>(bits) : 0.0; }
  WilsonInterval ci() const { return wilson(bit_errors, bits); }
};

// Per-(snr, seed) transmit/receive; the channel is seeded per seed only, so
// every snr point sees the same channels. Failing items are logged and skipped.
inline std::vector<BerPoint> ber_points(const ExperimentConfig& cfg, const Denoiser& den, ResultRecord& rec) {
  const size_t S = cfg.snr_db.size(), K = cfg.seeds.size();
  struct Item {
    IterTrace tr;
    std::string err;
  };
  std::vector<Item> items(S * K);
  parallel_for(static_cast<Index>(S * K), cfg.threads, [&](Index job) {
    const size_t si = static_cast<size_t>(job) / K, ki = static_cast<size_t>(job) % K;
    const std::uint64_t seed = cfg.seeds[ki];
    try {
      const ChannelMatrix A = generate(detail::channel_for_seed(cfg.channel, seed));
      TransmissionInstance inst = make_instance(A, den, cfg.snr_db[si], derive_seed(seed, 0xF0 + si), cfg.slots);
      if (cfg.receiver.csi_stdvar > 0) inst.A_rx = inject_csi_error(A, cfg.receiver.csi_stdvar, seed);
      ReceiverConfig rc = cfg.receiver;
      rc.probe_seed = derive_seed(seed, 0x9B);
      items[job].tr = run_receiver(inst, den, rc);
    } catch (const std::exception& e) {
      items[job].err = e.what();
    }
  });
  std::vector<BerPoint> pts(S);
  for (size_t si = 0; si < S; ++si) {
    BerPoint& p = pts[si];
    p.snr_db = cfg.snr_db[si];
    double iters = 0;
    for (size_t ki = 0; ki < K; ++ki) {
      const Item& it = items[si * K + ki];
      if (!it.err.empty()) {
        rec.errors.push_back("snr " + std::to_string(p.snr_db) + " seed " + std::to_string(cfg.seeds[ki]) + ": " +
                             it.err);
        continue;
      }
      p.bit_errors += it.tr.bit_errors;
      p.bits += it.tr.bits;
      p.frame_errors += it.tr.bit_errors > 0;
      ++p.frames;
      iters += it.tr.iterations;
      rec.raw.push_back({{"snr_db", p.snr_db},
                         {"seed", cfg.seeds[ki]},
                         {"bit_errors", it.tr.bit_errors},
                         {"bits", it.tr.bits},
                         {"iterations", it.tr.iterations},
                         {"final_v_phi", it.tr.final_v_phi()},
                         {"error", it.tr.error}});
    }
    p.mean_iterations = p.frames ? iters / static_cast<double>(p.frames) : 0.0;
  }
  return pts;
}

inline nlohmann::json ber_point_json(const BerPoint& p, const std::string& label = "") {
  const WilsonInterval ci = p.ci();
  nlohmann::json j = {{"snr_db", p.snr_db},
                      {"ber", p.ber()},
                      {"ber_lo", ci.lo},
                      {"ber_hi", ci.hi},
                      {"fer", p.frames ? static_cast<double>(p.frame_errors) / static_cast<double>(p.frames) : 0.0},
                      {"bit_errors", p.bit_errors},
                      {"bits", p.bits},
                      {"frames", p.frames},
                      {"mean_iterations", p.mean_iterations}};
  if (!label.empty()) j["label"] = label;
  return j;
}

inline ResultRecord run_ber_sweep(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRecord rec = detail::start_record(cfg);
  const auto den = make_denoiser(cfg, build_config_code(cfg));
  for (const BerPoint& p : ber_points(cfg, *den, rec)) rec.points.push_back(ber_point_json(p));
  rec.wall_time_s = detail::seconds_since(t0);
  return rec;
}

struct SeTrackPoint {
  int t = 0;
  double emp_gamma = 0, se_gamma = 0, emp_phi = 0, se_phi = 0;
  int n = 0;
};

// Seed-averaged empirical variances against the SE replayed with each run's
// own (theta, xi, zeta) choices, plus a free-running SE for reference.
inline ResultRecord run_se_tracking(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRecord rec = detail::start_record(cfg);
  const auto den = make_denoiser(cfg, build_config_code(cfg));
  ReceiverConfig rc = cfg.receiver;
  rc.receiver = ReceiverKind::mamp;
  rc.early_stop = false;
  const int T = rc.iters_for(den->coded());
  const DampingMode mode = rc.damping_for(den->coded());
  for (double snr_db : cfg.snr_db) {
    std::vector<SeTrackPoint> acc(T);
    std::vector<std::vector<IterRecord>> emp(cfg.seeds.size());
    std::vector<SeTrajectory> se(cfg.seeds.size());
    std::vector<std::string> errs(cfg.seeds.size());
    parallel_for(static_cast<Index>(cfg.seeds.size()), cfg.threads, [&](Index k) {
      const std::uint64_t seed = cfg.seeds[k];
      try {
        const ChannelMatrix A = generate(detail::channel_for_seed(cfg.channel, seed));
        const TransmissionInstance inst = make_instance(A, *den, snr_db, derive_seed(seed, 0xF0), cfg.slots);
        ReceiverConfig r = rc;
        r.probe_seed = derive_seed(seed, 0x9B);
        emp[k] = run_mamp(inst, *den, r).records;
        SeConfig sc;
        sc.max_iters = T;
        sc.tol = 0;
        sc.mc_samples = cfg.se_samples;
        sc.seed = derive_seed(seed, 0x5E);
        sc.replay = &emp[k];
        se[k] = predict_trajectory(inst.rx_profile(), inst.snr(), *den, sc);
      } catch (const std::exception& e) {
        errs[k] = e.what();
      }
    });
    for (size_t k = 0; k < cfg.seeds.size(); ++k) {
      if (!errs[k].empty()) {
        rec.errors.push_back("seed " + std::to_string(cfg.seeds[k]) + ": " + errs[k]);
        continue;
      }
      const size_t n = std::min(emp[k].size(), se[k].points.size());
      for (size_t i = 0; i < n; ++i) {
        SeTrackPoint& a = acc[i];
        a.t = static_cast<int>(i + 1);
        a.emp_gamma += emp[k][i].v_emp_gamma;
        a.emp_phi += emp[k][i].v_emp_phi;
        a.se_gamma += se[k].points[i].v_gamma;
        a.se_phi += se[k].points[i].v_phi_bar;
        ++a.n;
        rec.raw.push_back({{"snr_db", snr_db},
                           {"seed", cfg.seeds[k]},
                           {"t", i + 1},
                           {"v_emp_gamma", emp[k][i].v_emp_gamma},
                           {"v_se_gamma", se[k].points[i].v_gamma},
                           {"v_emp_phi", emp[k][i].v_emp_phi},
                           {"v_se_phi", se[k].points[i].v_phi_bar}});
      }
    }
    // free-running prediction from the first seed's channel
    SeTrajectory free;
    {
      const ChannelMatrix A = generate(detail::channel_for_seed(cfg.channel, cfg.seeds.front()));
      SeConfig sc;
      sc.max_iters = T;
      sc.tol = 0;
      sc.mc_samples = cfg.se_samples;
      sc.damping = mode;
      sc.Ld = rc.Ld;
      sc.fallback = rc.fallback;
      sc.optimize_xi = rc.optimize_xi;
      free = predict_trajectory(spectral_profile(A), db_to_lin(snr_db), *den, sc);
    }
    for (int i = 0; i < T; ++i) {
      const SeTrackPoint& a = acc[i];
      if (a.n == 0) continue;
      const double n = a.n;
      nlohmann::json j = {{"snr_db", snr_db},
                          {"t", a.t},
                          {"seeds", a.n},
                          {"v_emp_gamma", a.emp_gamma / n},
                          {"v_se_gamma", a.se_gamma / n},
                          {"rel_gamma", a.se_gamma / a.emp_gamma - 1},
                          {"v_emp_phi", a.emp_phi / n},
                          {"v_se_phi", a.se_phi / n},
                          {"rel_phi", a.se_phi / a.emp_phi - 1}};
      if (i < static_cast<int>(free.points.size())) {
        j["v_free_gamma"] = free.points[i].v_gamma;
        j["v_free_phi"] = free.points[i].v_phi_bar;
      }
      rec.points.push_back(j);
    }
  }
  rec.wall_time_s = detail::seconds_since(t0);
  return rec;
}

// Max rate, CAS rate and (Gaussian input) log-det capacity per snr, on the
// first seed's channel; the target curve of each point goes to raw.
inline ResultRecord run_rate_curve(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRecord rec = detail::start_record(cfg);
  const Constellation cons = Constellation::by_name(cfg.constellation);
  const SpectralProfile p =
      spectral_profile(generate(detail::channel_for_seed(cfg.channel, cfg.seeds.front())));
  for (double snr_db : cfg.snr_db) {
    const double snr = db_to_lin(snr_db);
    const RateResult rm = max_rate(p, snr, cons);
    const CasRate cr = cas_rate(p, snr, cons);
    rec.points.push_back({{"snr_db", snr_db},
                          {"rate_max", rm.rate_per_antenna},
                          {"sum_rate_max", rm.sum_rate},
                          {"rate_cas", cr.rate.rate_per_antenna},
                          {"rate_loss_cas", cr.rate_loss},
                          {"rho_star_cas", cr.rate.rho_star},
                          {"capacity_gaussian", capacity_gaussian(p, snr)}});
    const TransferCurve t = target_curve(p, snr, cons);
    for (size_t i = 0; i < t.size(); ++i)
      rec.raw.push_back({{"snr_db", snr_db},
                         {"rho", t.rho[i]},
                         {"target", t.values[i]},
                         {"constellation", t.constellation_part[i]},
                         {"mld_inverse", t.mld_inverse_part[i]}});
  }
  rec.wall_time_s = detail::seconds_since(t0);
  return rec;
}

struct DampingCurve {
  std::string label;
  double kappa = 0;
  std::vector<double> v_phi, ber;  // seed means per iteration
  int iterations_to_target = -1;   // first iteration whose mean BER <= target, -1 if never
  double final_v_phi = 0, final_ber = 0;
};

// Seed means of per-iteration v_phi and BER; runs that stop early carry
// their last values forward.
inline DampingCurve damping_curve(const ExperimentConfig& cfg, const Denoiser& den, const ChannelSpec& ch,
                                  const ReceiverConfig& rc, const std::string& label, ResultRecord& rec) {
  const int T = rc.iters_for(den.coded());
  DampingCurve c;
  c.label = label;
  c.kappa = ch.kappa;
  c.v_phi.assign(T, 0.0);
  c.ber.assign(T, 0.0);
  std::vector<IterTrace> traces(cfg.seeds.size());
  parallel_for(static_cast<Index>(cfg.seeds.size()), cfg.threads, [&](Index k) {
    const std::uint64_t seed = cfg.seeds[k];
    const ChannelMatrix A = generate(detail::channel_for_seed(ch, seed));
    const TransmissionInstance inst = make_instance(A, den, cfg.snr_db.front(), derive_seed(seed, 0xF0), cfg.slots);
    ReceiverConfig r = rc;
    r.probe_seed = derive_seed(seed, 0x9B);
    traces[k] = run_receiver(inst, den, r);
  });
  int used = 0;
  for (size_t k = 0; k < traces.size(); ++k) {
    const auto& recs = traces[k].records;
    if (!traces[k].error.empty()) rec.errors.push_back(label + " seed " + std::to_string(cfg.seeds[k]) + ": " +
                                                       traces[k].error);
    if (recs.empty()) continue;
    ++used;
    for (int t = 0; t < T; ++t) {
      const IterRecord& r = recs[std::min<size_t>(t, recs.size() - 1)];
      c.v_phi[t] += r.v_emp_phi;
      c.ber[t] += r.ber;
      rec.raw.push_back({{"label", label}, {"kappa", ch.kappa}, {"seed", cfg.seeds[k]}, {"t", t + 1},
                         {"v_emp_phi", r.v_emp_phi}, {"ber", r.ber}});
    }
  }
  for (int t = 0; t < T; ++t) {
    c.v_phi[t] /= std::max(used, 1);
    c.ber[t] /= std::max(used, 1);
    if (c.iterations_to_target < 0 && c.ber[t] <= cfg.target_ber) c.iterations_to_target = t + 1;
  }
  c.final_v_phi = c.v_phi.back();
  c.final_ber = c.ber.back();
  return c;
}

inline std::vector<DampingCurve> damping_compare(const ExperimentConfig& cfg, ResultRecord& rec) {
  const auto den = make_denoiser(cfg, build_config_code(cfg));
  std::vector<DampingCurve> out;
  for (double kappa : cfg.kappas) {
    ChannelSpec ch = cfg.channel;
    ch.family = ChannelFamily::ill;
    ch.kappa = kappa;
    ReceiverConfig rc = cfg.receiver;
    rc.receiver = ReceiverKind::oamp;
    rc.damping = DampingMode::automatic;
    out.push_back(damping_curve(cfg, *den, ch, rc, "oamp", rec));
    rc.receiver = ReceiverKind::mamp;
    for (DampingMode m : {DampingMode::none, DampingMode::analytical, DampingMode::backoff}) {
      rc.damping = m;
      out.push_back(damping_curve(cfg, *den, ch, rc, "mamp_" + to_string(m), rec));
    }
  }
  return out;
}

inline ResultRecord run_damping_compare(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRecord rec = detail::start_record(cfg);
  for (const DampingCurve& c : damping_compare(cfg, rec))
    rec.points.push_back({{"label", c.label},
                          {"kappa", c.kappa},
                          {"iterations_to_target", c.iterations_to_target},
                          {"final_v_phi", c.final_v_phi},
                          {"final_ber", c.final_ber}});
  rec.wall_time_s = detail::seconds_since(t0);
  return rec;
}

struct EigboundComparison {
  int tau = 0;
  std::vector<BerPoint> exact, approx;
  double max_log10_gap = 0;  // max |log10 BER_exact - log10 BER_approx| over points with errors
  bool overlap = true;       // Wilson intervals overlap at every snr
};

// Paired BER sweeps (same channels, frames and noise) with exact and
// approximated eigenvalue bounds.
inline std::vector<EigboundComparison> eigbound_compare(const ExperimentConfig& cfg, ResultRecord& rec) {
  const auto den = make_denoiser(cfg, build_config_code(cfg));
  ExperimentConfig ex = cfg;
  ex.receiver.dagger = DaggerSource::exact;
  const std::vector<BerPoint> exact = ber_points(ex, *den, rec);
  std::vector<EigboundComparison> out;
  for (int tau : cfg.taus) {
    EigboundComparison c;
    c.tau = tau;
    c.exact = exact;
    ExperimentConfig ap = cfg;
    ap.receiver.dagger = DaggerSource::approx;
    ap.receiver.tau = tau;
    c.approx = ber_points(ap, *den, rec);
    for (size_t i = 0; i < exact.size(); ++i) {
      const WilsonInterval a = c.exact[i].ci(), b = c.approx[i].ci();
      if (a.hi < b.lo || b.hi < a.lo) c.overlap = false;
      const double fl = 0.5 / static_cast<double>(std::max<long>(c.exact[i].bits, 1));
      c.max_log10_gap = std::max(c.max_log10_gap, std::abs(std::log10(std::max(c.exact[i].ber(), fl)) -
                                                           std::log10(std::max(c.approx[i].ber(), fl))));
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline ResultRecord run_eigbound_compare(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRecord rec = detail::start_record(cfg);
  for (const EigboundComparison& c : eigbound_compare(cfg, rec)) {
    for (size_t i = 0; i < c.exact.size(); ++i) {
      nlohmann::json j = ber_point_json(c.approx[i], "approx");
      j["tau"] = c.tau;
      j["ber_exact"] = c.exact[i].ber();
      j["ber_exact_lo"] = c.exact[i].ci().lo;
      j["ber_exact_hi"] = c.exact[i].ci().hi;
      j["overlap"] = c.overlap;
      j["max_log10_gap"] = c.max_log10_gap;
      rec.points.push_back(j);
    }
  }
  rec.wall_time_s = detail::seconds_since(t0);
  return rec;
}

struct CurveMatch {
  TransferCurve code, target;
  ErrorFreeResult check;
};

// Simulated code curve against the target on a grid over (0, rho_max]. A
// supplied curve on a wider grid is truncated at rho_max.
inline std::vector<double> curve_grid(double rho_hi, int points) {
  return rho_grid(rho_hi, points, 2.0);
}

inline TransferCurve simulate_code_curve(const ExperimentConfig& cfg, double rho_hi) {
  require(cfg.code != "uncoded", "curve_match needs a code");
  const auto code = build_config_code(cfg);
  CodeCurveConfig cc;
  cc.blocks = cfg.curve_blocks;
  cc.bp_iters = cfg.curve_bp_iters;
  cc.threads = cfg.threads;
  cc.seed = derive_seed(cfg.seeds.front(), 0xCC);
  return code_mmse_curve(*code, Constellation::by_name(cfg.constellation), curve_grid(rho_hi, cfg.curve_points), cc);
}

inline SpectralProfile curve_match_profile(const ExperimentConfig& cfg) {
  return spectral_profile(generate(detail::channel_for_seed(cfg.channel, cfg.seeds.front())));
}

inline CurveMatch curve_match(const ExperimentConfig& cfg, double snr_db, const TransferCurve* code_curve = nullptr) {
  require(cfg.code != "uncoded", "curve_match needs a code");
  const SpectralProfile p = curve_match_profile(cfg);
  const double snr = db_to_lin(snr_db);
  const double rm = rho_max(p.beta(), snr);
  CurveMatch m;
  if (!code_curve) m.code = simulate_code_curve(cfg, rm);
  else m.code = code_curve->rho.back() > rm ? truncate_curve(*code_curve, rm) : *code_curve;
  m.target = target_curve(p, snr, Constellation::by_name(cfg.constellation), m.code.rho);
  m.check = error_free_check(m.code, m.target);
  return m;
}

inline ResultRecord run_curve_match(const ExperimentConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRecord rec = detail::start_record(cfg);
  // the code curve does not depend on snr: simulate once up to the largest rho_max
  const double top = *std::max_element(cfg.snr_db.begin(), cfg.snr_db.end());
  const TransferCurve code = simulate_code_curve(cfg, rho_max(curve_match_profile(cfg).beta(), db_to_lin(top)));
  for (double snr_db : cfg.snr_db) {
    const CurveMatch m = curve_match(cfg, snr_db, &code);
    rec.points.push_back({{"snr_db", snr_db},
                          {"tunnel_open", m.check.pass},
                          {"marginal", m.check.marginal},
                          {"min_gap", m.check.min_gap},
                          {"first_violation_rho", std::isnan(m.check.first_violation_rho)
                                                      ? nlohmann::json()
                                                      : nlohmann::json(m.check.first_violation_rho)}});
    for (size_t i = 0; i < m.code.size(); ++i)
      rec.raw.push_back({{"snr_db", snr_db},
                         {"rho", m.code.rho[i]},
                         {"code", m.code.values[i]},
                         {"code_err", m.code.err[i]},
                         {"target", m.target.values[i]}});
  }
  rec.wall_time_s = detail::seconds_since(t0);
  return rec;
}

// Multiply-accumulate counts. The detector-only model uses the stated orders
// MAMP: M N T + N T^2 + T^3, OAMP/VAMP: (M^2 N + M^3) T. The end-to-end model
// adds L transmit slots per frame and a decoder costing `nld_ops` per
// iteration to both receivers.
struct ComplexityInput {
  double M = 5000, N = 5000;
  int T = 30;
  double slots = 1;
  double nld_ops = 0;
};

struct ComplexityReport {
  double mamp_ops = 0, oamp_ops = 0, ratio = 0;
  double mamp_e2e = 0, oamp_e2e = 0, ratio_e2e = 0;
};

inline ComplexityReport complexity_report(const ComplexityInput& in) {
  require(in.M > 0 && in.N > 0 && in.T >= 1 && in.slots >= 1 && in.nld_ops >= 0, "complexity_report: bad input");
  const double M = in.M, N = in.N, T = in.T, L = in.slots;
  ComplexityReport r;
  r.mamp_ops = M * N * T + N * T * T + T * T * T;
  r.oamp_ops = (M * M * N + M * M * M) * T;
  r.ratio = r.mamp_ops / r.oamp_ops;
  // MAMP: three matrix passes per iteration on L columns plus the memory terms;
  // OAMP/VAMP: one LMMSE matrix per iteration applied to L columns.
  r.mamp_e2e = 3 * M * N * L * T + N * L * T * (T + 1) / 2 + T * T * T + in.nld_ops * T;
  r.oamp_e2e = (M * M * N + M * M * M + 2 * M * N * L) * T + in.nld_ops * T;
  r.ratio_e2e = r.mamp_e2e / r.oamp_e2e;
  return r;
}

// Decoder work per outer iteration: demapping plus `bp_iters` BP sweeps over
// the graph edges, repeated for the divergence probes.
inline double decoder_ops(const LdpcCode& code, int bp_iters, int probes, int bits_per_symbol = 2) {
  const double edges = static_cast<double>(code.graph.edge_var.size());
  const double demap = static_cast<double>(code.n()) / bits_per_symbol * (1 << bits_per_symbol);
  return (1.0 + probes) * (demap + 2.0 * edges * bp_iters);
}

inline ResultRecord run_experiment(const ExperimentConfig& cfg) {
  switch (cfg.kind) {
    case ExperimentKind::ber_sweep: return run_ber_sweep(cfg);
    case ExperimentKind::se_tracking: return run_se_tracking(cfg);
    case ExperimentKind::rate_curve: return run_rate_curve(cfg);
    case ExperimentKind::damping_compare: return run_damping_compare(cfg);
    case ExperimentKind::eigbound_compare: return run_eigbound_compare(cfg);
    case ExperimentKind::curve_match: return run_curve_match(cfg);
  }
  throw invalid_argument("unknown experiment kind");
}

// Full-scale single operating point: N = 500, beta = 1, kappa = 10, codeword
// 1e5, SNR 2.2 dB with the matching optimized code.
inline ExperimentConfig extended_ber_config() {
  ExperimentConfig c;
  c.kind = ExperimentKind::ber_sweep;
  c.channel.family = ChannelFamily::ill;
  c.channel.M = 500;
  c.channel.N = 500;
  c.channel.kappa = 10;
  c.snr_db = {2.2};
  c.code = "ill_b1_k10";
  c.code_length = 100000;
  c.seeds.clear();
  for (std::uint64_t s = 1; s <= 20; ++s) c.seeds.push_back(s);
  return c;
}

}  // namespace mamp
