#pragma once

// Assembly-task formalism: objects (elements and trays), predicates,
// configurations, and steps with preconditions and add/del effects.
// A configuration is a set of ground predicates in canonical order, so
// equality and hashing are independent of the order predicates were
// written in the source file.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vimat/errors.hpp"

namespace vimat {

enum class ObjectKind { Element, Tray };

struct ObjectDecl {
  std::string name;
  ObjectKind kind = ObjectKind::Element;

  bool operator==(const ObjectDecl&) const = default;
};

// Fixed elementary-action vocabulary. Steps reference these as labels;
// state effects are declared per step, not per action.
inline constexpr std::array<std::string_view, 6> kElementaryActions = {
    "join", "split", "mount", "remove", "put", "take"};

inline bool is_elementary_action(std::string_view name) {
  for (auto a : kElementaryActions)
    if (a == name) return true;
  return false;
}

// Ground predicate, arity 1 or 2. Ordering is lexicographic by name then
// arguments, which defines the canonical order inside a Configuration.
struct Predicate {
  std::string name;
  std::vector<std::string> args;

  auto operator<=>(const Predicate&) const = default;

  std::string to_string() const {
    std::string s = name;
    s += '(';
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (i) s += ", ";
      s += args[i];
    }
    s += ')';
    return s;
  }
};

inline Predicate pred(std::string name, std::string a) {
  return Predicate{std::move(name), {std::move(a)}};
}

inline Predicate pred(std::string name, std::string a, std::string b) {
  return Predicate{std::move(name), {std::move(a), std::move(b)}};
}

// A set of predicates that hold simultaneously. Stored sorted and
// deduplicated; comparison is therefore order-independent.
class Configuration {
 public:
  Configuration() = default;

  explicit Configuration(std::vector<Predicate> preds) : preds_(std::move(preds)) {
    canonicalize(preds_);
  }

  const std::vector<Predicate>& predicates() const { return preds_; }
  std::size_t size() const { return preds_.size(); }
  bool empty() const { return preds_.empty(); }

  bool contains(const Predicate& p) const {
    return std::binary_search(preds_.begin(), preds_.end(), p);
  }

  bool contains_all(const std::vector<Predicate>& ps) const {
    for (const auto& p : ps)
      if (!contains(p)) return false;
    return true;
  }

  bool operator==(const Configuration&) const = default;
  auto operator<=>(const Configuration&) const = default;

  // FNV-1a over the canonical text; stable across runs, used for graph
  // dedup buckets and DOT node labels.
  std::uint64_t digest() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](std::string_view s) {
      for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
      }
    };
    for (const auto& p : preds_) {
      mix(p.name);
      for (const auto& a : p.args) {
        mix("|");
        mix(a);
      }
      mix(";");
    }
    return h;
  }

  std::string to_string() const {
    std::string s = "{";
    for (std::size_t i = 0; i < preds_.size(); ++i) {
      if (i) s += ", ";
      s += preds_[i].to_string();
    }
    s += "}";
    return s;
  }

  static void canonicalize(std::vector<Predicate>& ps) {
    std::sort(ps.begin(), ps.end());
    ps.erase(std::unique(ps.begin(), ps.end()), ps.end());
  }

 private:
  std::vector<Predicate> preds_;
};

struct ActionInstance {
  std::string name;                // one of kElementaryActions
  std::vector<std::string> args;   // object names

  bool operator==(const ActionInstance&) const = default;

  std::string to_string() const {
    std::string s = name;
    s += '(';
    for (std::size_t i = 0; i < args.size(); ++i) {
      if (i) s += ", ";
      s += args[i];
    }
    s += ')';
    return s;
  }
};

// Atomic unit of progress: a bundle of elementary actions guarded by
// preconditions, with explicit add/delete effects on the configuration.
struct Step {
  std::string name;
  std::vector<ActionInstance> actions;
  std::vector<Predicate> preconditions;  // canonical order
  std::vector<Predicate> add_effects;
  std::vector<Predicate> del_effects;

  bool operator==(const Step&) const = default;
};

struct PredicateSchema {
  std::string name;
  int arity = 1;

  bool operator==(const PredicateSchema&) const = default;
};

struct TaskDefinition {
  std::vector<ObjectDecl> objects;
  std::vector<PredicateSchema> predicate_schemas;
  std::vector<Step> steps;
  Configuration initial;
  Configuration final_state;

  std::vector<std::string> element_names() const {
    std::vector<std::string> out;
    for (const auto& o : objects)
      if (o.kind == ObjectKind::Element) out.push_back(o.name);
    return out;
  }

  std::vector<std::string> tray_names() const {
    std::vector<std::string> out;
    for (const auto& o : objects)
      if (o.kind == ObjectKind::Tray) out.push_back(o.name);
    return out;
  }

  const Step* find_step(std::string_view name) const {
    for (const auto& s : steps)
      if (s.name == name) return &s;
    return nullptr;
  }
};

// Raised by apply_step when preconditions are not met; carries the
// missing predicates so callers can report them.
class PreconditionError : public Error {
 public:
  PreconditionError(const Step& s, std::vector<Predicate> missing)
      : Error(format(s, missing)), missing_(std::move(missing)) {}

  const std::vector<Predicate>& missing() const { return missing_; }

 private:
  static std::string format(const Step& s, const std::vector<Predicate>& missing) {
    std::string m = "step \"" + s.name + "\" preconditions not met; missing:";
    for (const auto& p : missing) m += " " + p.to_string();
    return m;
  }

  std::vector<Predicate> missing_;
};

inline std::vector<Predicate> missing_preconditions(const Configuration& c, const Step& s) {
  std::vector<Predicate> out;
  for (const auto& p : s.preconditions)
    if (!c.contains(p)) out.push_back(p);
  return out;
}

inline bool check_preconditions(const Configuration& c, const Step& s) {
  return c.contains_all(s.preconditions);
}

// (c \ del_effects) ∪ add_effects, in canonical form.
inline Configuration apply_step(const Configuration& c, const Step& s) {
  if (auto missing = missing_preconditions(c, s); !missing.empty())
    throw PreconditionError(s, std::move(missing));
  std::vector<Predicate> out;
  out.reserve(c.size() + s.add_effects.size());
  for (const auto& p : c.predicates()) {
    if (std::find(s.del_effects.begin(), s.del_effects.end(), p) == s.del_effects.end())
      out.push_back(p);
  }
  out.insert(out.end(), s.add_effects.begin(), s.add_effects.end());
  return Configuration(std::move(out));
}

}  // namespace vimat
