#pragma once

// State-graph construction over a task's step set.
//
// Starting from the initial configuration we take the breadth-first
// closure under all applicable steps, then prune everything that is not
// on some path from the initial to the final configuration. Node 0 is
// always the initial configuration and numbering follows BFS discovery
// order, so identical task definitions produce identical graphs.

#include <algorithm>
#include <cstdio>
#include <deque>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "vimat/task.hpp"

namespace vimat {

struct GraphLimitError : ValidationError {
  explicit GraphLimitError(std::size_t cap)
      : ValidationError("state graph exceeds the node cap of " + std::to_string(cap)) {}
};

struct UnreachableGoalError : ValidationError {
  UnreachableGoalError()
      : ValidationError("final configuration is not reachable from the initial one") {}
};

struct StateGraph {
  struct Edge {
    std::size_t from = 0;
    std::size_t step = 0;  // index into TaskDefinition::steps
    std::size_t to = 0;

    auto operator<=>(const Edge&) const = default;
  };

  std::vector<Configuration> nodes;       // node 0 = initial configuration
  std::vector<Edge> edges;                // unique, ordered by (from, step, to)
  std::vector<std::vector<Edge>> out;     // adjacency mirror of `edges`
  std::size_t final_index = 0;

  std::size_t size() const { return nodes.size(); }

  bool is_sink(std::size_t i) const { return out[i].empty(); }
};

inline constexpr std::size_t kDefaultNodeCap = 100000;

inline StateGraph build_state_graph(const TaskDefinition& task,
                                    std::size_t max_nodes = kDefaultNodeCap) {
  std::vector<Configuration> nodes{task.initial};
  std::unordered_map<std::string, std::size_t> index{{task.initial.to_string(), 0}};
  std::vector<StateGraph::Edge> edges;

  for (std::size_t cur = 0; cur < nodes.size(); ++cur) {
    for (std::size_t si = 0; si < task.steps.size(); ++si) {
      const Step& step = task.steps[si];
      if (!check_preconditions(nodes[cur], step)) continue;
      Configuration next = apply_step(nodes[cur], step);
      auto key = next.to_string();
      auto [it, inserted] = index.try_emplace(key, nodes.size());
      if (inserted) {
        if (nodes.size() >= max_nodes) throw GraphLimitError(max_nodes);
        nodes.push_back(std::move(next));
      }
      edges.push_back({cur, si, it->second});
    }
  }

  auto fin = index.find(task.final_state.to_string());
  if (fin == index.end()) throw UnreachableGoalError();
  std::size_t final_raw = fin->second;

  // Keep only nodes that can still reach the final configuration; every
  // node is init-reachable by construction, so co-reachability suffices.
  std::vector<std::vector<std::size_t>> rev(nodes.size());
  for (const auto& e : edges) rev[e.to].push_back(e.from);
  std::vector<char> keep(nodes.size(), 0);
  std::deque<std::size_t> work{final_raw};
  keep[final_raw] = 1;
  while (!work.empty()) {
    std::size_t n = work.front();
    work.pop_front();
    for (std::size_t p : rev[n])
      if (!keep[p]) {
        keep[p] = 1;
        work.push_back(p);
      }
  }

  std::vector<std::size_t> remap(nodes.size(), SIZE_MAX);
  StateGraph g;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!keep[i]) continue;
    remap[i] = g.nodes.size();
    g.nodes.push_back(std::move(nodes[i]));
  }
  for (const auto& e : edges) {
    if (keep[e.from] && keep[e.to])
      g.edges.push_back({remap[e.from], e.step, remap[e.to]});
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  g.out.resize(g.nodes.size());
  for (const auto& e : g.edges) g.out[e.from].push_back(e);
  g.final_index = remap[final_raw];
  return g;
}

// All simple root-to-final paths, as step-index sequences, in lexicographic
// node-index order. Cycles in the graph are tolerated: a path never
// revisits a node. Output is truncated at max_plans.
inline std::vector<std::vector<std::size_t>> enumerate_plans(
    const StateGraph& g, std::size_t max_plans = SIZE_MAX) {
  std::vector<std::vector<std::size_t>> plans;
  if (g.nodes.empty() || max_plans == 0) return plans;

  std::vector<char> on_path(g.nodes.size(), 0);
  std::vector<std::size_t> steps;

  // Explore successors ordered by (to, step) so emitted plans follow the
  // lexicographic order of their node-index sequences.
  std::vector<std::vector<StateGraph::Edge>> ordered = g.out;
  for (auto& es : ordered)
    std::sort(es.begin(), es.end(), [](const auto& a, const auto& b) {
      return std::tie(a.to, a.step) < std::tie(b.to, b.step);
    });

  auto dfs = [&](auto&& self, std::size_t node) -> bool {
    if (node == g.final_index) {
      plans.push_back(steps);
      if (plans.size() >= max_plans) return false;
      // The final node may have outgoing edges; longer paths through it
      // are still valid simple paths, so keep exploring.
    }
    on_path[node] = 1;
    for (const auto& e : ordered[node]) {
      if (on_path[e.to]) continue;
      steps.push_back(e.step);
      bool keep_going = self(self, e.to);
      steps.pop_back();
      if (!keep_going) {
        on_path[node] = 0;
        return false;
      }
    }
    on_path[node] = 0;
    return true;
  };
  dfs(dfs, 0);
  return plans;
}

struct TransitionMatrix {
  std::vector<std::vector<double>> probs;  // row-stochastic, square over nodes
  double stay_prob = 0.8;

  std::size_t size() const { return probs.size(); }
};

inline TransitionMatrix transition_matrix(const StateGraph& g, double stay_prob = 0.8) {
  if (!(stay_prob > 0.0 && stay_prob < 1.0))
    throw ConfigError("stay_prob must lie strictly between 0 and 1");
  TransitionMatrix tm;
  tm.stay_prob = stay_prob;
  std::size_t n = g.nodes.size();
  tm.probs.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::size_t> succ;
    for (const auto& e : g.out[i])
      if (e.to != i) succ.push_back(e.to);
    std::sort(succ.begin(), succ.end());
    succ.erase(std::unique(succ.begin(), succ.end()), succ.end());
    if (succ.empty()) {
      tm.probs[i][i] = 1.0;  // absorbing: the final configuration
      continue;
    }
    tm.probs[i][i] = stay_prob;
    double share = (1.0 - stay_prob) / static_cast<double>(succ.size());
    for (std::size_t j : succ) tm.probs[i][j] = share;
  }
  return tm;
}

inline std::string to_dot(const StateGraph& g, const TaskDefinition& task) {
  std::ostringstream os;
  os << "digraph states {\n  rankdir=LR;\n";
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    char digest[20];
    std::snprintf(digest, sizeof digest, "%016llx",
                  static_cast<unsigned long long>(g.nodes[i].digest()));
    os << "  n" << i << " [label=\"" << i << "\\n" << digest << "\"";
    if (i == 0) os << ", shape=box";
    if (i == g.final_index) os << ", peripheries=2";
    os << "];\n";
  }
  for (const auto& e : g.edges) {
    os << "  n" << e.from << " -> n" << e.to << " [label=\"";
    for (char c : task.steps[e.step].name) {
      if (c == '"' || c == '\\') os << '\\';
      os << c;
    }
    os << "\"];\n";
  }
  os << "}\n";
  return os.str();
}

// Human-readable dump: one block per node listing its predicate set.
inline std::string dump_state_graph(const StateGraph& g, const TaskDefinition& task) {
  std::ostringstream os;
  os << "nodes: " << g.nodes.size() << "  edges: " << g.edges.size()
     << "  final: " << g.final_index << "\n";
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    os << "node " << i;
    if (i == 0) os << " (initial)";
    if (i == g.final_index) os << " (final)";
    os << "\n";
    for (const auto& p : g.nodes[i].predicates()) os << "  " << p.to_string() << "\n";
  }
  for (const auto& e : g.edges)
    os << "edge " << e.from << " -> " << e.to << "  via \"" << task.steps[e.step].name << "\"\n";
  return os.str();
}

}  // namespace vimat
