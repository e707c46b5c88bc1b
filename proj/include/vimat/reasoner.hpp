#pragma once

// Log-domain Viterbi over the state graph.
//
//   V_{1,k} = P(y_1|s_k) pi_k          pi one-hot on the initial state
//   V_{t,k} = P(y_t|s_k) max_x a_{x,k} V_{t-1,x}
//
// computed throughout as log V to survive arbitrarily long sessions.
// Ties in every max are broken toward the smallest state index so runs
// are bit-reproducible and comparable against enumeration oracles.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "vimat/fusion.hpp"
#include "vimat/planner.hpp"

namespace vimat {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct ReasonerOptions {
  double sigma = 0.5;                 // likelihood scale
  enum class Norm { L2, L1 } norm = Norm::L2;
  std::string work_tray = "T_work";   // tray slot standing in for mounted elements
  bool uniform_prior = false;         // start mid-task: uniform pi instead of one-hot
  std::size_t trellis_window = 10000; // columns retained before compaction
  double warning_threshold = 0.3;
  int warning_window = 15;            // consecutive low-confidence frames before warning
};

// Binary expectation E_y(s): entry (E, T) = 1 iff do_contain(T, E) holds in s,
// and a mounted element counts as present in the work tray.
inline ObservationVector expected_observation(const Configuration& s,
                                              const ObservationLayout& layout,
                                              const std::string& work_tray = "T_work") {
  ObservationVector ey(layout.dim());
  auto work = layout.tray_index(work_tray);
  for (const auto& p : s.predicates()) {
    if (p.name == "do_contain" && p.args.size() == 2) {
      auto t = layout.tray_index(p.args[0]);
      auto e = layout.element_index(p.args[1]);
      if (t && e) ey[layout.index(*e, *t)] = 1.0;
    } else if (p.name == "is_mounted" && p.args.size() == 1 && work) {
      auto e = layout.element_index(p.args[0]);
      if (e) ey[layout.index(*e, *work)] = 1.0;
    }
  }
  return ey;
}

inline std::vector<ObservationVector> expected_observations(const StateGraph& g,
                                                            const ObservationLayout& layout,
                                                            const std::string& work_tray = "T_work") {
  std::vector<ObservationVector> out;
  out.reserve(g.size());
  for (const auto& s : g.nodes) out.push_back(expected_observation(s, layout, work_tray));
  return out;
}

// log P(y|s) = -||y - E_y(s)|| / sigma, the proportionality constant dropped.
inline double observation_log_likelihood(const ObservationVector& y, const ObservationVector& ey,
                                         double sigma,
                                         ReasonerOptions::Norm norm = ReasonerOptions::Norm::L2) {
  if (y.dim() != ey.dim()) throw DimensionMismatchError(y.dim(), ey.dim());
  if (!(sigma > 0)) throw ConfigError("sigma must be positive");
  double acc = 0;
  for (std::size_t i = 0; i < y.dim(); ++i) {
    double d = y[i] - ey[i];
    acc += norm == ReasonerOptions::Norm::L2 ? d * d : std::abs(d);
  }
  double dist = norm == ReasonerOptions::Norm::L2 ? std::sqrt(acc) : acc;
  return -dist / sigma;
}

struct Trellis {
  std::vector<std::vector<double>> columns;      // log V, newest last
  std::vector<std::vector<int>> backpointers;    // -1 in the first retained column
  double sigma = 0.5;
  std::size_t time = 0;                          // total observations consumed

  std::vector<std::size_t> committed;            // compacted path prefix
  std::size_t base_time = 0;                     // frames represented by `committed`

  std::size_t states() const { return columns.empty() ? 0 : columns.front().size(); }
};

struct BeliefState {
  std::vector<double> probs;   // softmax over states, sums to 1
  std::size_t map_state = 0;   // argmax, smallest index on ties
};

namespace detail {

inline std::size_t argmax_smallest(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace detail

inline Trellis viterbi_init(const ObservationVector& y1, const StateGraph& g,
                            const std::vector<ObservationVector>& expected,
                            const ReasonerOptions& opt = {}) {
  Trellis tr;
  tr.sigma = opt.sigma;
  std::size_t n = g.size();
  std::vector<double> col(n, kNegInf);
  if (opt.uniform_prior) {
    double logpi = -std::log(static_cast<double>(n));
    for (std::size_t k = 0; k < n; ++k)
      col[k] = observation_log_likelihood(y1, expected[k], opt.sigma, opt.norm) + logpi;
  } else {
    col[0] = observation_log_likelihood(y1, expected[0], opt.sigma, opt.norm);
  }
  tr.columns.push_back(std::move(col));
  tr.backpointers.emplace_back(n, -1);
  tr.time = 1;
  return tr;
}

inline void compact_trellis(Trellis& tr);

inline void viterbi_step(Trellis& tr, const ObservationVector& y, const TransitionMatrix& tm,
                         const std::vector<ObservationVector>& expected,
                         const ReasonerOptions& opt = {}) {
  const std::vector<double>& prev = tr.columns.back();
  std::size_t n = prev.size();
  std::vector<double> col(n, kNegInf);
  std::vector<int> back(n, -1);
  for (std::size_t k = 0; k < n; ++k) {
    double best = kNegInf;
    int best_x = -1;
    for (std::size_t x = 0; x < n; ++x) {
      double a = tm.probs[x][k];
      if (a <= 0 || prev[x] == kNegInf) continue;
      double cand = prev[x] + std::log(a);
      if (cand > best) {  // strict: ties keep the smallest x
        best = cand;
        best_x = static_cast<int>(x);
      }
    }
    if (best_x < 0) continue;
    col[k] = best + observation_log_likelihood(y, expected[k], tr.sigma, opt.norm);
    back[k] = best_x;
  }
  tr.columns.push_back(std::move(col));
  tr.backpointers.push_back(std::move(back));
  ++tr.time;

  if (tr.columns.size() > opt.trellis_window) compact_trellis(tr);
}

// Commit everything but the newest column to the fixed path prefix. Later
// evidence can no longer revise committed frames: the fixed-lag trade-off
// that keeps memory bounded on long sessions.
inline void compact_trellis(Trellis& tr) {
  std::size_t ncols = tr.columns.size();
  if (ncols < 2) return;
  std::vector<std::size_t> tail(ncols);
  std::size_t cur = detail::argmax_smallest(tr.columns.back());
  for (std::size_t c = ncols; c-- > 0;) {
    tail[c] = cur;
    int b = tr.backpointers[c][cur];
    cur = b >= 0 ? static_cast<std::size_t>(b) : cur;
  }
  tr.committed.insert(tr.committed.end(), tail.begin(), tail.end() - 1);
  tr.base_time += ncols - 1;
  tr.columns.erase(tr.columns.begin(), tr.columns.end() - 1);
  tr.backpointers.erase(tr.backpointers.begin(), tr.backpointers.end() - 1);
  std::fill(tr.backpointers.front().begin(), tr.backpointers.front().end(), -1);
}

inline std::vector<std::size_t> viterbi_path(const Trellis& tr) {
  if (tr.columns.empty()) throw Error("viterbi_path on an empty trellis");
  std::size_t ncols = tr.columns.size();
  std::vector<std::size_t> path(tr.base_time + ncols);
  std::copy(tr.committed.begin(), tr.committed.end(), path.begin());
  std::size_t cur = detail::argmax_smallest(tr.columns.back());
  for (std::size_t c = ncols; c-- > 0;) {
    path[tr.base_time + c] = cur;
    int b = tr.backpointers[c][cur];
    cur = b >= 0 ? static_cast<std::size_t>(b) : cur;
  }
  return path;
}

inline BeliefState current_belief(const Trellis& tr) {
  if (tr.columns.empty()) throw Error("current_belief on an empty trellis");
  const auto& col = tr.columns.back();
  BeliefState b;
  b.map_state = detail::argmax_smallest(col);
  double mx = col[b.map_state];
  b.probs.resize(col.size(), 0.0);
  if (mx == kNegInf) {  // degenerate: no state explains anything
    b.probs.assign(col.size(), 1.0 / static_cast<double>(col.size()));
    return b;
  }
  double sum = 0;
  for (std::size_t i = 0; i < col.size(); ++i) {
    double e = col[i] == kNegInf ? 0.0 : std::exp(col[i] - mx);
    b.probs[i] = e;
    sum += e;
  }
  for (auto& p : b.probs) p /= sum;
  return b;
}

struct DeviationWarning {
  std::size_t frame = 0;
  int consecutive = 0;  // low-confidence frames so far
  std::vector<std::pair<std::size_t, double>> top_states;  // up to 3, by probability
};

// Warns when the belief stays diffuse (max prob below threshold) for
// `warning_window` consecutive frames; recovery resets the counter.
class DeviationMonitor {
 public:
  explicit DeviationMonitor(const ReasonerOptions& opt = {})
      : threshold_(opt.warning_threshold), window_(opt.warning_window) {
    if (!(threshold_ > 0 && threshold_ < 1)) throw ConfigError("warning threshold must be in (0,1)");
  }

  std::optional<DeviationWarning> update(const BeliefState& belief, std::size_t frame) {
    double mx = belief.probs.empty() ? 0.0 : belief.probs[belief.map_state];
    if (mx < threshold_)
      ++count_;
    else
      count_ = 0;
    if (count_ < window_) return std::nullopt;
    DeviationWarning w;
    w.frame = frame;
    w.consecutive = count_;
    std::vector<std::size_t> idx(belief.probs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::partial_sort(idx.begin(), idx.begin() + std::min<std::size_t>(3, idx.size()), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (belief.probs[a] != belief.probs[b]) return belief.probs[a] > belief.probs[b];
                        return a < b;
                      });
    for (std::size_t i = 0; i < std::min<std::size_t>(3, idx.size()); ++i)
      w.top_states.push_back({idx[i], belief.probs[idx[i]]});
    return w;
  }

  int consecutive_low() const { return count_; }

 private:
  double threshold_;
  int window_;
  int count_ = 0;
};

}  // namespace vimat
