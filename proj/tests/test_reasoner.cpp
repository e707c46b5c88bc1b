#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "vimat/reasoner.hpp"
#include "vimat/task_parser.hpp"

using namespace vimat;

#ifndef VIMAT_DATA_DIR
#error "tests need VIMAT_DATA_DIR"
#endif

namespace {

TaskDefinition lego() { return load_task_or_throw(std::string(VIMAT_DATA_DIR) + "/lego.task"); }

// A minimal fake graph: the reasoner only reads node count from it.
StateGraph fake_graph(std::size_t n) {
  StateGraph g;
  g.nodes.resize(n);
  g.out.resize(n);
  return g;
}

double loglik(const ObservationVector& y, const ObservationVector& ey, double sigma,
              ReasonerOptions::Norm norm) {
  return observation_log_likelihood(y, ey, sigma, norm);
}

// Exhaustive oracle: score every state sequence of the given horizon and
// return the best log-probability (up to the shared normalizing constant).
struct OracleResult {
  double best = kNegInf;
  std::vector<std::size_t> best_seq;
  std::size_t optima = 0;  // sequences within 1e-12 of best
};

OracleResult oracle_viterbi(const std::vector<double>& log_pi, const TransitionMatrix& tm,
                            const std::vector<ObservationVector>& expected,
                            const std::vector<ObservationVector>& obs, double sigma,
                            ReasonerOptions::Norm norm) {
  std::size_t n = log_pi.size();
  std::size_t horizon = obs.size();
  OracleResult res;
  std::vector<std::size_t> seq(horizon);
  auto rec = [&](auto&& self, std::size_t t, double score) -> void {
    if (score == kNegInf) return;
    if (t == horizon) {
      if (score > res.best + 1e-12) {
        res.best = score;
        res.best_seq = seq;
        res.optima = 1;
      } else if (score > res.best - 1e-12) {
        ++res.optima;
        if (score > res.best) {
          res.best = score;
          res.best_seq = seq;
        }
      }
      return;
    }
    for (std::size_t k = 0; k < n; ++k) {
      double step;
      if (t == 0) {
        step = log_pi[k];
      } else {
        double a = tm.probs[seq[t - 1]][k];
        step = a > 0 ? std::log(a) : kNegInf;
      }
      if (step == kNegInf) continue;
      seq[t] = k;
      self(self, t + 1, score + step + loglik(obs[t], expected[k], sigma, norm));
    }
  };
  rec(rec, 0, 0.0);
  return res;
}

double path_score(const std::vector<std::size_t>& path, const std::vector<double>& log_pi,
                  const TransitionMatrix& tm, const std::vector<ObservationVector>& expected,
                  const std::vector<ObservationVector>& obs, double sigma,
                  ReasonerOptions::Norm norm) {
  REQUIRE(path.size() == obs.size());
  double s = log_pi[path[0]] + loglik(obs[0], expected[path[0]], sigma, norm);
  for (std::size_t t = 1; t < path.size(); ++t) {
    double a = tm.probs[path[t - 1]][path[t]];
    REQUIRE(a > 0);
    s += std::log(a) + loglik(obs[t], expected[path[t]], sigma, norm);
  }
  return s;
}

}  // namespace

TEST_CASE("expected observation: do_contain and is_mounted populate the grid") {
  ObservationLayout layout{{"E1", "E2", "E3"}, {"T_in", "T_work"}};
  Configuration s({pred("do_contain", "T_in", "E2"), pred("is_mounted", "E3"),
                   pred("do_contain", "T_missing", "E1"), pred("is_mounted", "E_missing"),
                   pred("is_free", "E1")});
  ObservationVector y = expected_observation(s, layout);
  auto work = *layout.tray_index("T_work");
  auto tin = *layout.tray_index("T_in");
  CHECK(y[layout.index(1, tin)] == 1.0);   // E2 in T_in
  CHECK(y[layout.index(2, work)] == 1.0);  // E3 mounted
  double total = 0;
  for (std::size_t i = 0; i < y.dim(); ++i) total += y[i];
  CHECK(total == 2.0);  // unknown names contribute nothing
}

TEST_CASE("expected observation: the work-tray slot is configurable") {
  ObservationLayout layout{{"E1"}, {"T_a", "T_b"}};
  Configuration s({pred("is_mounted", "E1")});
  ObservationVector ya = expected_observation(s, layout, "T_a");
  ObservationVector yb = expected_observation(s, layout, "T_b");
  CHECK(ya[layout.index(0, 0)] == 1.0);
  CHECK(ya[layout.index(0, 1)] == 0.0);
  CHECK(yb[layout.index(0, 1)] == 1.0);
}

TEST_CASE("expected observations over the bundled task: initial and final states") {
  TaskDefinition task = lego();
  StateGraph g = build_state_graph(task);
  ObservationLayout layout = ObservationLayout::from_task(task);
  auto expected = expected_observations(g, layout);
  REQUIRE(expected.size() == g.size());

  auto ones = [&](const ObservationVector& v) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.dim(); ++i) {
      CHECK((v[i] == 0.0 || v[i] == 1.0));
      if (v[i] == 1.0) ++n;
    }
    return n;
  };
  // initial: six mounted + three elements waiting in the input tray
  CHECK(ones(expected[0]) == 9);
  // final: six mounted + three removed to the output tray
  CHECK(ones(expected[g.final_index]) == 9);

  auto work = *layout.tray_index("T_work");
  auto e1 = *layout.element_index("E1");
  CHECK(expected[0][layout.index(e1, work)] == 1.0);
  auto tout = *layout.tray_index("T_out");
  auto e4p = *layout.element_index("E4'");
  CHECK(expected[g.final_index][layout.index(e4p, tout)] == 1.0);
  CHECK(expected[0][layout.index(e4p, tout)] == 0.0);
}

TEST_CASE("observation likelihood: exact match scores zero, distances scale by sigma") {
  ObservationVector a(3), b(3);
  a.values = {1, 0, 1};
  b.values = {1, 0, 1};
  CHECK(observation_log_likelihood(a, b, 0.5) == 0.0);

  b.values = {1, 1, 1};  // L2 and L1 distance both 1
  CHECK(observation_log_likelihood(a, b, 0.5) == doctest::Approx(-2.0));
  CHECK(observation_log_likelihood(a, b, 1.0) == doctest::Approx(-1.0));
  CHECK(observation_log_likelihood(a, b, 0.25) == doctest::Approx(-4.0));

  ObservationVector c(2), d(2);
  c.values = {0.6, 0.8};
  d.values = {0.0, 0.0};
  CHECK(observation_log_likelihood(c, d, 0.5, ReasonerOptions::Norm::L2) ==
        doctest::Approx(-2.0));  // sqrt(.36+.64) = 1
  CHECK(observation_log_likelihood(c, d, 0.5, ReasonerOptions::Norm::L1) ==
        doctest::Approx(-2.8));  // 1.4 / 0.5

  ObservationVector wrong(5);
  CHECK_THROWS_AS(observation_log_likelihood(a, wrong, 0.5), DimensionMismatchError);
  CHECK_THROWS_AS(observation_log_likelihood(a, b, 0.0), ConfigError);
  CHECK_THROWS_AS(observation_log_likelihood(a, b, -1.0), ConfigError);
}

TEST_CASE("viterbi init: one-hot prior pins the first column to the initial state") {
  StateGraph g = fake_graph(4);
  std::vector<ObservationVector> expected(4, ObservationVector(2));
  expected[0].values = {1, 0};
  expected[1].values = {0, 1};
  expected[2].values = {1, 1};
  expected[3].values = {0, 0};

  ObservationVector y(2);
  y.values = {1, 0};
  Trellis tr = viterbi_init(y, g, expected);
  REQUIRE(tr.columns.size() == 1);
  CHECK(tr.columns[0][0] == 0.0);
  for (std::size_t k = 1; k < 4; ++k) CHECK(tr.columns[0][k] == kNegInf);
  CHECK(tr.time == 1);

  BeliefState b = current_belief(tr);
  CHECK(b.map_state == 0);
  CHECK(b.probs[0] == doctest::Approx(1.0));
}

TEST_CASE("viterbi init: uniform prior spreads mass by likelihood") {
  StateGraph g = fake_graph(3);
  std::vector<ObservationVector> expected(3, ObservationVector(1));
  expected[0].values = {0.0};
  expected[1].values = {1.0};
  expected[2].values = {0.5};
  ObservationVector y(1);
  y.values = {1.0};
  ReasonerOptions opt;
  opt.uniform_prior = true;
  opt.sigma = 0.5;
  Trellis tr = viterbi_init(y, g, expected, opt);
  double logpi = -std::log(3.0);
  CHECK(tr.columns[0][0] == doctest::Approx(-2.0 + logpi));
  CHECK(tr.columns[0][1] == doctest::Approx(0.0 + logpi));
  CHECK(tr.columns[0][2] == doctest::Approx(-1.0 + logpi));
  CHECK(current_belief(tr).map_state == 1);
}

TEST_CASE("belief: a (0, -1) column softmaxes to (0.7311, 0.2689)") {
  Trellis tr;
  tr.columns.push_back({0.0, -1.0});
  tr.backpointers.push_back({-1, -1});
  BeliefState b = current_belief(tr);
  CHECK(b.probs[0] == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(b.probs[1] == doctest::Approx(0.2689).epsilon(1e-4));
  CHECK(b.map_state == 0);

  // shift invariance: adding a constant to the column changes nothing
  Trellis shifted;
  shifted.columns.push_back({1000.0, 999.0});
  shifted.backpointers.push_back({-1, -1});
  BeliefState bs = current_belief(shifted);
  CHECK(bs.probs[0] == doctest::Approx(b.probs[0]));
  CHECK(bs.probs[1] == doctest::Approx(b.probs[1]));
}

TEST_CASE("belief: sums to one, degenerate all-neg-inf column falls back to uniform") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-50, 10);
  for (int trial = 0; trial < 100; ++trial) {
    Trellis tr;
    std::vector<double> col(1 + rng() % 12);
    for (auto& v : col) v = u(rng);
    tr.columns.push_back(col);
    tr.backpointers.emplace_back(col.size(), -1);
    BeliefState b = current_belief(tr);
    double sum = 0;
    for (double p : b.probs) sum += p;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    for (std::size_t i = 0; i < col.size(); ++i) CHECK(col[i] <= col[b.map_state]);
  }

  Trellis dead;
  dead.columns.push_back({kNegInf, kNegInf, kNegInf, kNegInf});
  dead.backpointers.push_back({-1, -1, -1, -1});
  BeliefState b = current_belief(dead);
  for (double p : b.probs) CHECK(p == doctest::Approx(0.25));
}

TEST_CASE("property: viterbi matches exhaustive sequence enumeration, 100 seeds") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    std::size_t n = 2 + rng() % 4;        // up to 5 states
    std::size_t horizon = 2 + rng() % 5;  // up to 6 observations
    std::size_t dim = 1 + rng() % 3;

    // random row-stochastic matrix with some structural zeros
    TransitionMatrix tm;
    tm.probs.assign(n, std::vector<double>(n, 0.0));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (u01(rng) < 0.3) continue;  // structural zero
        tm.probs[i][j] = 0.05 + u01(rng);
        row += tm.probs[i][j];
      }
      if (row == 0) {  // keep every row stochastic
        tm.probs[i][i] = 1.0;
        row = 1.0;
      }
      for (auto& v : tm.probs[i]) v /= row;
    }

    std::vector<ObservationVector> expected(n, ObservationVector(dim));
    for (auto& e : expected)
      for (std::size_t i = 0; i < dim; ++i) e[i] = u01(rng) < 0.5 ? 0.0 : 1.0;
    std::vector<ObservationVector> obs(horizon, ObservationVector(dim));
    for (auto& y : obs)
      for (std::size_t i = 0; i < dim; ++i) y[i] = u01(rng);

    ReasonerOptions opt;
    opt.sigma = 0.25 + u01(rng);
    opt.norm = seed % 2 ? ReasonerOptions::Norm::L1 : ReasonerOptions::Norm::L2;
    opt.uniform_prior = seed % 3 == 0;

    std::vector<double> log_pi(n, kNegInf);
    if (opt.uniform_prior)
      log_pi.assign(n, -std::log(double(n)));
    else
      log_pi[0] = 0.0;

    StateGraph g = fake_graph(n);
    Trellis tr = viterbi_init(obs[0], g, expected, opt);
    for (std::size_t t = 1; t < horizon; ++t) viterbi_step(tr, obs[t], tm, expected, opt);

    OracleResult oracle = oracle_viterbi(log_pi, tm, expected, obs, opt.sigma, opt.norm);
    REQUIRE(oracle.best > kNegInf);

    double trellis_best = *std::max_element(tr.columns.back().begin(), tr.columns.back().end());
    CHECK(trellis_best == doctest::Approx(oracle.best).epsilon(1e-9));

    std::vector<std::size_t> path = viterbi_path(tr);
    REQUIRE(path.size() == horizon);
    CHECK(path_score(path, log_pi, tm, expected, obs, opt.sigma, opt.norm) ==
          doctest::Approx(oracle.best).epsilon(1e-9));
    if (oracle.optima == 1) CHECK(path == oracle.best_seq);
  }
}

TEST_CASE("ties break toward the smallest state index at every step") {
  // two indistinguishable states: every candidate ties, so the decoded
  // path must stay on state 0 throughout
  std::size_t n = 2;
  TransitionMatrix tm;
  tm.probs = {{0.5, 0.5}, {0.5, 0.5}};
  std::vector<ObservationVector> expected(n, ObservationVector(1));
  expected[0].values = {0.5};
  expected[1].values = {0.5};
  ObservationVector y(1);
  y.values = {0.7};
  ReasonerOptions opt;
  opt.uniform_prior = true;

  StateGraph g = fake_graph(n);
  Trellis tr = viterbi_init(y, g, expected, opt);
  for (int t = 0; t < 5; ++t) viterbi_step(tr, y, tm, expected, opt);
  std::vector<std::size_t> path = viterbi_path(tr);
  for (std::size_t s : path) CHECK(s == 0);
  CHECK(current_belief(tr).map_state == 0);
}

TEST_CASE("backpointers stay consistent with positive transitions") {
  TaskDefinition task = lego();
  StateGraph g = build_state_graph(task);
  TransitionMatrix tm = transition_matrix(g);
  ObservationLayout layout = ObservationLayout::from_task(task);
  auto expected = expected_observations(g, layout);

  std::mt19937_64 rng(3);
  Trellis tr = viterbi_init(expected[0], g, expected);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 40; ++t) {
    ObservationVector y = expected[rng() % g.size()];
    for (std::size_t i = 0; i < y.dim(); ++i) y[i] = std::clamp(y[i] + 0.2 * u(rng) - 0.1, 0.0, 1.0);
    viterbi_step(tr, y, tm, expected);
    const auto& col = tr.columns.back();
    const auto& back = tr.backpointers.back();
    const auto& prev = tr.columns[tr.columns.size() - 2];
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (col[k] == kNegInf) {
        CHECK(back[k] == -1);
        continue;
      }
      REQUIRE(back[k] >= 0);
      REQUIRE(back[k] < int(g.size()));
      CHECK(tm.probs[back[k]][k] > 0);
      CHECK(prev[back[k]] > kNegInf);
    }
  }
  // decoded path only moves along self-loops or graph edges
  std::vector<std::size_t> path = viterbi_path(tr);
  for (std::size_t t = 1; t < path.size(); ++t) CHECK(tm.probs[path[t - 1]][path[t]] > 0);
}

TEST_CASE("long sessions: 10000 steps neither underflow nor grow the trellis unbounded") {
  TaskDefinition task = lego();
  StateGraph g = build_state_graph(task);
  TransitionMatrix tm = transition_matrix(g);
  ObservationLayout layout = ObservationLayout::from_task(task);
  auto expected = expected_observations(g, layout);

  ReasonerOptions opt;
  opt.trellis_window = 64;
  Trellis tr = viterbi_init(expected[0], g, expected, opt);
  for (int t = 1; t < 10000; ++t) viterbi_step(tr, expected[0], tm, expected, opt);

  CHECK(tr.columns.size() <= 64);
  CHECK(tr.time == 10000);
  BeliefState b = current_belief(tr);
  CHECK(std::isfinite(tr.columns.back()[b.map_state]));
  CHECK(b.map_state == 0);  // constant initial-state evidence
  double sum = 0;
  for (double p : b.probs) sum += p;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));

  std::vector<std::size_t> path = viterbi_path(tr);
  REQUIRE(path.size() == 10000);
  for (std::size_t s : path) CHECK(s == 0);
}

TEST_CASE("fixed-lag compaction reproduces the full-window decode on clean evidence") {
  TaskDefinition task = lego();
  StateGraph g = build_state_graph(task);
  TransitionMatrix tm = transition_matrix(g);
  ObservationLayout layout = ObservationLayout::from_task(task);
  auto expected = expected_observations(g, layout);

  // walk the first enumerated plan, dwelling 12 frames per state
  auto plans = enumerate_plans(g, 1);
  REQUIRE(!plans.empty());
  std::vector<std::size_t> states{0};
  for (std::size_t step : plans[0]) {
    for (const auto& e : g.out[states.back()])
      if (e.step == step) {
        states.push_back(e.to);
        break;
      }
  }
  REQUIRE(states.size() == plans[0].size() + 1);

  std::vector<ObservationVector> obs;
  for (std::size_t s : states)
    for (int d = 0; d < 12; ++d) obs.push_back(expected[s]);

  ReasonerOptions small, big;
  small.trellis_window = 8;
  big.trellis_window = 100000;
  Trellis a = viterbi_init(obs[0], g, expected, small);
  Trellis b = viterbi_init(obs[0], g, expected, big);
  for (std::size_t t = 1; t < obs.size(); ++t) {
    viterbi_step(a, obs[t], tm, expected, small);
    viterbi_step(b, obs[t], tm, expected, big);
    CHECK(current_belief(a).map_state == current_belief(b).map_state);
  }
  CHECK(a.columns.size() <= 8);
  CHECK(b.columns.size() == obs.size());
  CHECK(viterbi_path(a) == viterbi_path(b));
  // the decode visits every planned state in order
  std::vector<std::size_t> path = viterbi_path(b);
  std::vector<std::size_t> distinct;
  for (std::size_t s : path)
    if (distinct.empty() || distinct.back() != s) distinct.push_back(s);
  CHECK(distinct == states);
}

TEST_CASE("deviation monitor: warns after the window fills, recovery resets") {
  ReasonerOptions opt;
  opt.warning_threshold = 0.3;
  opt.warning_window = 3;
  DeviationMonitor mon(opt);

  BeliefState diffuse;
  diffuse.probs = {0.2, 0.2, 0.2, 0.2, 0.2};
  diffuse.map_state = 0;
  BeliefState confident;
  confident.probs = {0.8, 0.1, 0.05, 0.05, 0.0};
  confident.map_state = 0;

  CHECK(!mon.update(diffuse, 0));
  CHECK(!mon.update(diffuse, 1));
  auto w = mon.update(diffuse, 2);
  REQUIRE(w.has_value());
  CHECK(w->frame == 2);
  CHECK(w->consecutive == 3);
  CHECK(mon.update(diffuse, 3).has_value());  // stays raised while diffuse
  CHECK(mon.update(diffuse, 3)->consecutive > 3);

  CHECK(!mon.update(confident, 4));  // recovery
  CHECK(mon.consecutive_low() == 0);
  // window - 1 low frames then recovery: never warns
  CHECK(!mon.update(diffuse, 5));
  CHECK(!mon.update(diffuse, 6));
  CHECK(!mon.update(confident, 7));
  CHECK(!mon.update(diffuse, 8));
}

TEST_CASE("deviation warning carries the top-3 candidate states") {
  ReasonerOptions opt;
  opt.warning_threshold = 0.3;
  opt.warning_window = 1;
  DeviationMonitor mon(opt);
  BeliefState b;
  b.probs = {0.29, 0.05, 0.2, 0.26, 0.2};
  b.map_state = 0;
  auto w = mon.update(b, 17);
  REQUIRE(w.has_value());
  REQUIRE(w->top_states.size() == 3);
  CHECK(w->top_states[0] == std::pair<std::size_t, double>{0, 0.29});
  CHECK(w->top_states[1] == std::pair<std::size_t, double>{3, 0.26});
  CHECK(w->top_states[2] == std::pair<std::size_t, double>{2, 0.2});  // tie: smaller index

  ReasonerOptions bad;
  bad.warning_threshold = 0.0;
  CHECK_THROWS_AS(DeviationMonitor{bad}, ConfigError);
  bad.warning_threshold = 1.0;
  CHECK_THROWS_AS(DeviationMonitor{bad}, ConfigError);
}
