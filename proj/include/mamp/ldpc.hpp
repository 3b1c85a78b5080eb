#pragma once

#include "mamp/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

namespace mamp {

// Edge-perspective degree distribution: sum_d c_d X^(d-1).
struct DegreeDistribution {
  std::vector<std::pair<int, double>> terms;  // (degree, coefficient), degrees ascending

  double total() const {
    double s = 0;
    for (auto& [d, c] : terms) s += c;
    return s;
  }
  // sum_d c_d / d
  double inv_mean() const {
    double s = 0;
    for (auto& [d, c] : terms) s += c / d;
    return s;
  }
  int max_degree() const { return terms.empty() ? 0 : terms.back().first; }

  void normalize() {
    std::sort(terms.begin(), terms.end());
    const double s = total();
    require(s > 0, "degree distribution has zero mass");
    for (auto& t : terms) t.second /= s;
  }

  static DegreeDistribution single(int d) { return {{{d, 1.0}}}; }
};

inline double design_rate(const DegreeDistribution& lambda, const DegreeDistribution& mu) {
  return 1.0 - mu.inv_mean() / lambda.inv_mean();
}

inline void to_json(nlohmann::json& j, const DegreeDistribution& d) {
  j = nlohmann::json::object();
  for (auto& [deg, c] : d.terms) j[std::to_string(deg)] = c;
}

inline void from_json(const nlohmann::json& j, DegreeDistribution& d) {
  d.terms.clear();
  for (auto& [k, v] : j.items()) d.terms.emplace_back(std::stoi(k), v.get<double>());
  std::sort(d.terms.begin(), d.terms.end());
}

struct BitMatrix {
  Index rows = 0, cols = 0, words = 0;
  std::vector<std::uint64_t> data;

  BitMatrix() = default;
  BitMatrix(Index r, Index c) : rows(r), cols(c), words((c + 63) / 64), data(static_cast<size_t>(r * ((c + 63) / 64)), 0) {}
  std::uint64_t* row(Index r) { return data.data() + r * words; }
  const std::uint64_t* row(Index r) const { return data.data() + r * words; }
  bool get(Index r, Index c) const { return (row(r)[c >> 6] >> (c & 63)) & 1u; }
  void set(Index r, Index c) { row(r)[c >> 6] |= (std::uint64_t{1} << (c & 63)); }
  void flip(Index r, Index c) { row(r)[c >> 6] ^= (std::uint64_t{1} << (c & 63)); }
};

// Tanner graph in check-major edge order.
struct ParityGraph {
  int n = 0, m = 0;
  std::vector<int> check_ptr;  // size m+1
  std::vector<int> edge_var;   // size E, var of each edge
  std::vector<int> var_ptr;    // size n+1
  std::vector<int> var_edges;  // edges grouped by variable

  int edges() const { return static_cast<int>(edge_var.size()); }
  int var_degree(int v) const { return var_ptr[v + 1] - var_ptr[v]; }
  int check_degree(int c) const { return check_ptr[c + 1] - check_ptr[c]; }

  static ParityGraph from_adjacency(int n, const std::vector<std::vector<int>>& check_adj) {
    ParityGraph g;
    g.n = n;
    g.m = static_cast<int>(check_adj.size());
    g.check_ptr.assign(g.m + 1, 0);
    for (int c = 0; c < g.m; ++c) g.check_ptr[c + 1] = g.check_ptr[c] + static_cast<int>(check_adj[c].size());
    g.edge_var.reserve(g.check_ptr[g.m]);
    for (auto& row : check_adj)
      for (int v : row) g.edge_var.push_back(v);
    g.var_ptr.assign(n + 1, 0);
    for (int v : g.edge_var) g.var_ptr[v + 1]++;
    for (int v = 0; v < n; ++v) g.var_ptr[v + 1] += g.var_ptr[v];
    g.var_edges.assign(g.edge_var.size(), 0);
    std::vector<int> fill(g.var_ptr.begin(), g.var_ptr.end() - 1);
    for (int e = 0; e < g.edges(); ++e) g.var_edges[fill[g.edge_var[e]]++] = e;
    return g;
  }
};

struct PegOptions {
  int max_depth = 3;          // BFS depth in check layers (girth preference up to 2*depth+2)
  double clip_fraction = 20;  // degrees above n/clip_fraction are clipped
  bool interleave = true;     // random variable-node labels
};

class LdpcCode {
 public:
  DegreeDistribution lambda;  // as realized after clipping
  DegreeDistribution mu;
  ParityGraph graph;
  double rate = 0;         // realized k/n
  std::vector<std::string> log;

  int n() const { return graph.n; }
  int m() const { return graph.m; }
  int k() const { return static_cast<int>(info_pos_.size()); }
  const std::vector<int>& info_positions() const { return info_pos_; }

  bool parity_ok(const std::vector<std::uint8_t>& c) const {
    for (int ch = 0; ch < graph.m; ++ch) {
      int s = 0;
      for (int e = graph.check_ptr[ch]; e < graph.check_ptr[ch + 1]; ++e) s ^= c[graph.edge_var[e]];
      if (s) return false;
    }
    return true;
  }

  std::vector<std::uint8_t> encode(const std::vector<std::uint8_t>& msg) const {
    require(static_cast<int>(msg.size()) == k(),
            "message length " + std::to_string(msg.size()) + " != k = " + std::to_string(k()));
    std::vector<std::uint8_t> c(n(), 0);
    const Index words = gen_.words;
    std::vector<std::uint64_t> packed(words, 0);
    for (int j = 0; j < k(); ++j) {
      c[info_pos_[j]] = msg[j] & 1u;
      if (msg[j] & 1u) packed[j >> 6] |= std::uint64_t{1} << (j & 63);
    }
    for (size_t i = 0; i < parity_pos_.size(); ++i) {
      const std::uint64_t* row = gen_.row(static_cast<Index>(i));
      int acc = 0;
      for (Index w = 0; w < words; ++w) acc += std::popcount(row[w] & packed[w]);
      c[parity_pos_[i]] = static_cast<std::uint8_t>(acc & 1);
    }
    return c;
  }

  std::vector<std::uint8_t> extract_message(const std::vector<std::uint8_t>& c) const {
    std::vector<std::uint8_t> m(k());
    for (int j = 0; j < k(); ++j) m[j] = c[info_pos_[j]];
    return m;
  }

  // Reduced row echelon form of H gives pivot (parity) and free (info) columns.
  void build_encoder() {
    const int n_ = graph.n, m_ = graph.m;
    BitMatrix h(m_, n_);
    for (int c = 0; c < m_; ++c)
      for (int e = graph.check_ptr[c]; e < graph.check_ptr[c + 1]; ++e) h.flip(c, graph.edge_var[e]);
    std::vector<int> pivot_col;
    std::vector<char> is_pivot(n_, 0);
    Index rank = 0;
    const Index words = h.words;
    for (int col = 0; col < n_ && rank < m_; ++col) {
      Index piv = -1;
      for (Index r = rank; r < m_; ++r)
        if (h.get(r, col)) {
          piv = r;
          break;
        }
      if (piv < 0) continue;
      if (piv != rank) std::swap_ranges(h.row(piv), h.row(piv) + words, h.row(rank));
      const std::uint64_t* pr = h.row(rank);
      const Index w0 = col >> 6;
      const std::uint64_t mask = std::uint64_t{1} << (col & 63);
      for (Index r = 0; r < m_; ++r) {
        if (r == rank) continue;
        std::uint64_t* rr = h.row(r);
        if (rr[w0] & mask)
          for (Index w = 0; w < words; ++w) rr[w] ^= pr[w];
      }
      pivot_col.push_back(col);
      is_pivot[col] = 1;
      ++rank;
    }
    info_pos_.clear();
    for (int c = 0; c < n_; ++c)
      if (!is_pivot[c]) info_pos_.push_back(c);
    parity_pos_ = pivot_col;
    gen_ = BitMatrix(rank, static_cast<Index>(info_pos_.size()));
    for (Index r = 0; r < rank; ++r)
      for (size_t j = 0; j < info_pos_.size(); ++j)
        if (h.get(r, info_pos_[j])) gen_.set(r, static_cast<Index>(j));
    rate = static_cast<double>(info_pos_.size()) / n_;
    if (rank < m_) log.push_back("parity checks linearly dependent: rank " + std::to_string(rank) + " of " +
                                 std::to_string(m_));
  }

 private:
  std::vector<int> info_pos_;
  std::vector<int> parity_pos_;
  BitMatrix gen_;  // parity bit i = <gen_ row i, message>
};

namespace detail {

// Largest-remainder rounding of total * fractions.
inline std::vector<long> apportion(long total, const std::vector<double>& frac) {
  std::vector<long> out(frac.size());
  std::vector<std::pair<double, size_t>> rem;
  long used = 0;
  for (size_t i = 0; i < frac.size(); ++i) {
    const double x = total * frac[i];
    out[i] = static_cast<long>(std::floor(x));
    used += out[i];
    rem.emplace_back(x - out[i], i);
  }
  std::sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  for (long i = 0; i < total - used; ++i) out[rem[static_cast<size_t>(i) % rem.size()].second]++;
  return out;
}

}  // namespace detail

// Move mass of variable degrees above n/clip_fraction onto the largest listed
// degree that is still feasible.
inline DegreeDistribution clip_degrees(const DegreeDistribution& lambda, int n, double clip_fraction,
                                       std::vector<std::string>* log) {
  const int limit = std::max(2, static_cast<int>(std::floor(n / clip_fraction)));
  DegreeDistribution out;
  double moved = 0;
  for (auto& [d, c] : lambda.terms) {
    if (d <= limit) out.terms.emplace_back(d, c);
    else {
      moved += c;
      if (log) log->push_back("clipped lambda_" + std::to_string(d) + " = " + std::to_string(c) + " (limit " +
                              std::to_string(limit) + ")");
    }
  }
  require(!out.terms.empty(), "all variable degrees exceed the feasible limit");
  if (moved > 0) {
    out.terms.back().second += moved;
    if (log) log->push_back("reassigned mass " + std::to_string(moved) + " to lambda_" +
                            std::to_string(out.terms.back().first));
  }
  return out;
}

inline LdpcCode build_ldpc(DegreeDistribution lambda, DegreeDistribution mu, int n, std::uint64_t seed,
                           const PegOptions& opt = {}) {
  require(n >= 4, "code length too small");
  lambda.normalize();
  mu.normalize();
  LdpcCode code;
  lambda = clip_degrees(lambda, n, opt.clip_fraction, &code.log);
  code.lambda = lambda;
  code.mu = mu;

  // node-perspective counts
  std::vector<double> vfrac;
  for (auto& [d, c] : lambda.terms) vfrac.push_back((c / d) / lambda.inv_mean());
  const auto vcount = detail::apportion(n, vfrac);
  std::vector<int> vdeg;
  vdeg.reserve(n);
  for (size_t i = 0; i < vcount.size(); ++i)
    for (long j = 0; j < vcount[i]; ++j) vdeg.push_back(lambda.terms[i].first);
  const long E = std::accumulate(vdeg.begin(), vdeg.end(), 0L);

  const int m = static_cast<int>(std::lround(E * mu.inv_mean()));
  require(m >= 1 && m < n, "degree distributions give an invalid number of checks");
  std::vector<double> cfrac;
  for (auto& [d, c] : mu.terms) cfrac.push_back((c / d) / mu.inv_mean());
  const auto ccount = detail::apportion(m, cfrac);
  std::vector<int> ctarget;
  for (size_t i = 0; i < ccount.size(); ++i)
    for (long j = 0; j < ccount[i]; ++j) ctarget.push_back(mu.terms[i].first);
  long sockets = std::accumulate(ctarget.begin(), ctarget.end(), 0L);
  // make check sockets match E
  for (size_t i = 0; sockets < E; i = (i + 1) % ctarget.size()) {
    ctarget[i]++;
    sockets++;
  }
  for (size_t i = ctarget.size() - 1; sockets > E; i = (i + ctarget.size() - 1) % ctarget.size()) {
    if (ctarget[i] > 2) {
      ctarget[i]--;
      sockets--;
    }
  }

  Rng rng = make_rng(seed, 0x9E6);
  std::vector<std::vector<int>> vadj(n), cadj(m);
  std::vector<int> cdeg(m, 0);
  std::vector<int> cmark(m, 0), vmark(n, 0);
  int stamp = 0;
  std::vector<int> frontier, next, cands;

  // checks bucketed by remaining deficit, for fast "largest deficit" queries
  const int max_def = *std::max_element(ctarget.begin(), ctarget.end());
  std::vector<std::vector<int>> bucket(max_def + 1);
  std::vector<int> bpos(m);
  for (int c = 0; c < m; ++c) {
    bpos[c] = static_cast<int>(bucket[ctarget[c]].size());
    bucket[ctarget[c]].push_back(c);
  }
  auto connect = [&](int v, int c) {
    vadj[v].push_back(c);
    cadj[c].push_back(v);
    const int d = ctarget[c] - cdeg[c];
    cdeg[c]++;
    if (d > 0) {
      auto& b = bucket[d];
      const int last = b.back();
      b[bpos[c]] = last;
      bpos[last] = bpos[c];
      b.pop_back();
      bpos[c] = static_cast<int>(bucket[d - 1].size());
      bucket[d - 1].push_back(c);
    }
  };
  auto uniform = [&](const std::vector<int>& v) {
    std::uniform_int_distribution<size_t> u(0, v.size() - 1);
    return v[u(rng)];
  };
  // largest-deficit open check with cmark != stamp, uniform among ties
  auto pick_unreached = [&]() -> int {
    for (int d = max_def; d >= 1; --d) {
      const auto& b = bucket[d];
      if (b.empty()) continue;
      for (int tries = 0; tries < 32; ++tries) {
        const int c = uniform(b);
        if (cmark[c] != stamp) return c;
      }
      cands.clear();
      for (int c : b)
        if (cmark[c] != stamp) cands.push_back(c);
      if (!cands.empty()) return uniform(cands);
    }
    return -1;
  };

  for (int v = 0; v < n; ++v) {
    for (int k = 0; k < vdeg[v]; ++k) {
      int chosen = -1;
      ++stamp;
      for (int c : vadj[v]) cmark[c] = stamp;
      std::vector<int> last_layer;
      if (k > 0) {
        // depth-limited BFS; cmark == stamp marks checks within reach
        frontier.assign(vadj[v].begin(), vadj[v].end());
        vmark[v] = stamp;
        last_layer = frontier;
        for (int depth = 2; depth <= opt.max_depth && !frontier.empty(); ++depth) {
          next.clear();
          for (int c : frontier)
            for (int u : cadj[c]) {
              if (vmark[u] == stamp) continue;
              vmark[u] = stamp;
              for (int c2 : vadj[u])
                if (cmark[c2] != stamp) {
                  cmark[c2] = stamp;
                  next.push_back(c2);
                }
            }
          if (!next.empty()) last_layer = next;
          frontier.swap(next);
        }
      }
      chosen = pick_unreached();
      if (chosen < 0 && last_layer.size() > vadj[v].size()) {
        // every open check is within reach: prefer the deepest layer
        int best = 0;
        cands.clear();
        for (int c : last_layer) {
          const int def = ctarget[c] - cdeg[c];
          if (def <= 0 || def < best) continue;
          if (def > best) {
            best = def;
            cands.clear();
          }
          cands.push_back(c);
        }
        if (!cands.empty()) chosen = uniform(cands);
      }
      if (chosen < 0) {
        ++stamp;
        for (int c : vadj[v]) cmark[c] = stamp;
        chosen = pick_unreached();
      }
      if (chosen < 0) {
        // all sockets used (rounding slack): least-loaded non-neighbour
        int best = std::numeric_limits<int>::max();
        cands.clear();
        for (int c = 0; c < m; ++c) {
          if (cmark[c] == stamp) continue;
          if (cdeg[c] < best) {
            best = cdeg[c];
            cands.clear();
          }
          if (cdeg[c] == best) cands.push_back(c);
        }
        if (cands.empty()) throw numerical_error("PEG: variable degree exceeds number of checks");
        chosen = uniform(cands);
      }
      connect(v, chosen);
    }
  }
  if (opt.interleave) {
    // PEG runs in sorted-degree order; relabel the variable nodes so that
    // degrees are spread over the frame instead of sitting in blocks
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (auto& row : cadj)
      for (int& v : row) v = perm[v];
  }
  code.graph = ParityGraph::from_adjacency(n, cadj);
  code.build_encoder();
  return code;
}

inline LdpcCode regular_code(int dv, int dc, int n, std::uint64_t seed, const PegOptions& opt = {}) {
  return build_ldpc(DegreeDistribution::single(dv), DegreeDistribution::single(dc), n, seed, opt);
}

struct BpResult {
  std::vector<double> app;  // a-posteriori LLRs, log P(0)/P(1)
  std::vector<std::uint8_t> hard;
  bool converged = false;
  int iterations = 0;
};

inline constexpr double kLlrClip = 30.0;

inline double clip_llr(double x) { return std::clamp(x, -kLlrClip, kLlrClip); }

// Sum-product decoding in the LLR domain. With early_stop, decoding ends once
// the hard decisions satisfy every check.
inline BpResult ldpc_bp_decode(const std::vector<double>& ch, const LdpcCode& code, int max_iters,
                               bool early_stop = true) {
  const ParityGraph& g = code.graph;
  require(static_cast<int>(ch.size()) == g.n, "LLR vector length != n_code");
  require(max_iters >= 1, "max_iters must be >= 1");
  const int E = g.edges();
  std::vector<double> v2c(E), c2v(E, 0.0), t(E);
  std::vector<double> fwd, bwd;
  BpResult res;
  res.app.resize(g.n);
  res.hard.resize(g.n);
  std::vector<double> chc(g.n);
  for (int v = 0; v < g.n; ++v) chc[v] = clip_llr(ch[v]);
  for (int e = 0; e < E; ++e) v2c[e] = chc[g.edge_var[e]];

  for (int it = 1; it <= max_iters; ++it) {
    // check update: 2 atanh(prod_{others} tanh(L/2))
    for (int c = 0; c < g.m; ++c) {
      const int b = g.check_ptr[c], d = g.check_ptr[c + 1] - b;
      double* tt = t.data() + b;
      for (int i = 0; i < d; ++i) tt[i] = std::tanh(0.5 * v2c[b + i]);
      fwd.resize(d);
      bwd.resize(d);
      double acc = 1.0;
      for (int i = 0; i < d; ++i) {
        fwd[i] = acc;
        acc *= tt[i];
      }
      acc = 1.0;
      for (int i = d - 1; i >= 0; --i) {
        bwd[i] = acc;
        acc *= tt[i];
      }
      for (int i = 0; i < d; ++i) {
        const double p = std::clamp(fwd[i] * bwd[i], -1.0 + 1e-16, 1.0 - 1e-16);
        c2v[b + i] = clip_llr(2.0 * std::atanh(p));
      }
    }
    // variable update
    for (int v = 0; v < g.n; ++v) {
      double tot = chc[v];
      for (int k = g.var_ptr[v]; k < g.var_ptr[v + 1]; ++k) tot += c2v[g.var_edges[k]];
      for (int k = g.var_ptr[v]; k < g.var_ptr[v + 1]; ++k) {
        const int e = g.var_edges[k];
        v2c[e] = clip_llr(tot - c2v[e]);
      }
      res.app[v] = clip_llr(tot);
      res.hard[v] = res.app[v] < 0 ? 1 : 0;
    }
    res.iterations = it;
    res.converged = code.parity_ok(res.hard);
    if (early_stop && res.converged) break;
  }
  return res;
}

// Shipped degree-distribution tables (data/ldpc_tables.json).
struct CodeTableEntry {
  std::string id;
  std::string channel;  // "ill", "rayleigh", "kron", or "p2p"
  double beta = 1;
  double kappa = 1;
  double alpha = 0;
  int N = 0, M = 0;
  double rate = 0;
  DegreeDistribution lambda, mu;
  double threshold_db = 0;
  double capacity_db = 0;
  bool has_threshold = false;
};

inline std::vector<CodeTableEntry> load_code_tables(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open code table file '" + path + "'");
  nlohmann::json j;
  in >> j;
  std::vector<CodeTableEntry> out;
  for (auto& e : j.at("codes")) {
    CodeTableEntry c;
    c.id = e.at("id").get<std::string>();
    c.channel = e.value("channel", std::string("p2p"));
    c.beta = e.value("beta", 1.0);
    c.kappa = e.value("kappa", 1.0);
    c.alpha = e.value("alpha", 0.0);
    c.N = e.value("N", 0);
    c.M = e.value("M", 0);
    c.rate = e.value("rate", 0.0);
    c.lambda = e.at("lambda").get<DegreeDistribution>();
    c.mu = e.at("mu").get<DegreeDistribution>();
    if (e.contains("threshold_dB")) {
      c.threshold_db = e.at("threshold_dB").get<double>();
      c.capacity_db = e.at("capacity_dB").get<double>();
      c.has_threshold = true;
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline CodeTableEntry find_code(const std::vector<CodeTableEntry>& table, const std::string& id) {
  for (auto& c : table)
    if (c.id == id) return c;
  throw invalid_argument("no code table entry with id '" + id + "'");
}

}  // namespace mamp
