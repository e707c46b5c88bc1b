#pragma once

// Parser and canonical serializer for the task-definition DSL (".task").
//
// A task file has five sections, in any order, each at most once:
//
//   objects {
//     element E1 E2 ...
//     tray T_in ...
//   }
//   predicates {
//     do_contain/2
//     is_free/1
//   }
//   steps {
//     step "Mount element E4 on E3" {
//       actions: take(E4, T_in), mount(E4, E3)
//       pre: do_contain(T_in, E4), is_accessible(E3), is_free(E3)
//       add: is_mounted(E4)
//       del: do_contain(T_in, E4)
//     }
//   }
//   initial { ... one predicate per entry ... }
//   final { ... }
//
// '#' starts a comment running to end of line. Identifiers may end in
// prime marks (E4'). Parsing never throws: the result carries either a
// validated TaskDefinition or a list of diagnostics with line/column.

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vimat/task.hpp"

namespace vimat {

struct Diagnostic {
  int line = 0;
  int col = 0;
  std::string message;

  std::string to_string() const {
    return std::to_string(line) + ":" + std::to_string(col) + ": " + message;
  }
};

struct ParseResult {
  std::optional<TaskDefinition> task;
  std::vector<Diagnostic> diagnostics;

  bool ok() const { return task.has_value(); }
};

namespace detail {

enum class TokKind { Ident, String, Integer, LBrace, RBrace, LParen, RParen, Comma, Colon, Slash, End };

struct Token {
  TokKind kind = TokKind::End;
  std::string text;
  int line = 1;
  int col = 1;
};

class TaskLexer {
 public:
  explicit TaskLexer(std::string_view src) : src_(src) {}

  Token next() {
    skip_ws_and_comments();
    Token t;
    t.line = line_;
    t.col = col_;
    if (pos_ >= src_.size()) {
      t.kind = TokKind::End;
      return t;
    }
    char c = src_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        advance();
      while (pos_ < src_.size() && src_[pos_] == '\'') advance();
      t.kind = TokKind::Ident;
      t.text = std::string(src_.substr(start, pos_ - start));
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      std::size_t start = pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance();
      t.kind = TokKind::Integer;
      t.text = std::string(src_.substr(start, pos_ - start));
      return t;
    }
    if (c == '"') {
      advance();
      std::string out;
      bool closed = false;
      while (pos_ < src_.size()) {
        char d = src_[pos_];
        if (d == '"') {
          advance();
          closed = true;
          break;
        }
        if (d == '\\' && pos_ + 1 < src_.size()) {
          advance();
          char e = src_[pos_];
          out += (e == 'n') ? '\n' : e;
          advance();
          continue;
        }
        if (d == '\n') break;  // unterminated on this line
        out += d;
        advance();
      }
      t.kind = TokKind::String;
      t.text = std::move(out);
      if (!closed) t.text = std::string("\x01") + t.text;  // marker caught by parser
      return t;
    }
    advance();
    switch (c) {
      case '{': t.kind = TokKind::LBrace; break;
      case '}': t.kind = TokKind::RBrace; break;
      case '(': t.kind = TokKind::LParen; break;
      case ')': t.kind = TokKind::RParen; break;
      case ',': t.kind = TokKind::Comma; break;
      case ':': t.kind = TokKind::Colon; break;
      case '/': t.kind = TokKind::Slash; break;
      default:
        t.kind = TokKind::End;
        t.text = std::string(1, c);
        t.line = line_;
        t.col = col_ - 1;
        t.text = "\x02" + t.text;  // unknown character marker
        break;
    }
    return t;
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_ws_and_comments() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

}  // namespace detail

class TaskParser {
 public:
  explicit TaskParser(std::string_view src) : lexer_(src) { bump(); }

  ParseResult parse() {
    ParseResult result;
    bool saw_objects = false, saw_predicates = false, saw_steps = false;
    bool saw_initial = false, saw_final = false;

    while (cur_.kind != detail::TokKind::End) {
      if (cur_.kind != detail::TokKind::Ident) {
        error(cur_, "expected section name (objects, predicates, steps, initial, final)");
        recover_to_section();
        continue;
      }
      std::string section = cur_.text;
      if (section == "objects") {
        mark_once(saw_objects, "objects");
        parse_objects();
      } else if (section == "predicates") {
        mark_once(saw_predicates, "predicates");
        parse_predicates();
      } else if (section == "steps") {
        mark_once(saw_steps, "steps");
        parse_steps();
      } else if (section == "initial") {
        mark_once(saw_initial, "initial");
        bump();
        task_.initial = parse_predicate_block();
      } else if (section == "final") {
        mark_once(saw_final, "final");
        bump();
        task_.final_state = parse_predicate_block();
      } else {
        error(cur_, "unknown section '" + section + "'");
        recover_to_section();
      }
    }

    validate();
    result.diagnostics = std::move(diags_);
    if (result.diagnostics.empty()) result.task = std::move(task_);
    return result;
  }

 private:
  using TokKind = detail::TokKind;

  void bump() { cur_ = lexer_.next(); }

  bool at(TokKind k) const { return cur_.kind == k; }

  bool accept(TokKind k) {
    if (!at(k)) return false;
    bump();
    return true;
  }

  void expect(TokKind k, const char* what) {
    if (!accept(k)) {
      error(cur_, std::string("expected ") + what);
      if (cur_.kind != TokKind::End) bump();
    }
  }

  void error(const detail::Token& t, std::string msg) {
    diags_.push_back({t.line, t.col, std::move(msg)});
  }

  void mark_once(bool& flag, const char* name) {
    if (flag) error(cur_, std::string("duplicate section '") + name + "'");
    flag = true;
  }

  void recover_to_section() {
    int depth = 0;
    while (cur_.kind != TokKind::End) {
      if (cur_.kind == TokKind::LBrace) ++depth;
      if (cur_.kind == TokKind::RBrace) {
        if (depth <= 1) {
          bump();
          return;
        }
        --depth;
      }
      bump();
    }
  }

  std::optional<std::string> parse_ident(const char* what) {
    if (cur_.kind == TokKind::Ident) {
      std::string s = cur_.text;
      bump();
      return s;
    }
    error(cur_, std::string("expected ") + what);
    if (cur_.kind != TokKind::End && cur_.kind != TokKind::RBrace) bump();
    return std::nullopt;
  }

  void parse_objects() {
    bump();
    expect(TokKind::LBrace, "'{' after 'objects'");
    while (!at(TokKind::RBrace) && !at(TokKind::End)) {
      if (cur_.kind != TokKind::Ident || (cur_.text != "element" && cur_.text != "tray")) {
        error(cur_, "expected 'element' or 'tray' declaration");
        bump();
        continue;
      }
      ObjectKind kind = cur_.text == "element" ? ObjectKind::Element : ObjectKind::Tray;
      bump();
      bool any = false;
      while (cur_.kind == TokKind::Ident && cur_.text != "element" && cur_.text != "tray") {
        object_lines_[cur_.text] = cur_.line;
        task_.objects.push_back({cur_.text, kind});
        any = true;
        bump();
      }
      if (!any) error(cur_, "expected at least one object name");
    }
    expect(TokKind::RBrace, "'}' closing objects section");
  }

  void parse_predicates() {
    bump();
    expect(TokKind::LBrace, "'{' after 'predicates'");
    while (!at(TokKind::RBrace) && !at(TokKind::End)) {
      auto name = parse_ident("predicate name");
      if (!name) continue;
      int line = cur_.line;
      expect(TokKind::Slash, "'/' before predicate arity");
      int arity = 0;
      if (cur_.kind == TokKind::Integer) {
        arity = std::stoi(cur_.text);
        bump();
      } else {
        error(cur_, "expected arity digit after '/'");
      }
      schema_lines_[*name] = line;
      task_.predicate_schemas.push_back({*name, arity});
    }
    expect(TokKind::RBrace, "'}' closing predicates section");
  }

  void parse_steps() {
    bump();
    expect(TokKind::LBrace, "'{' after 'steps'");
    while (!at(TokKind::RBrace) && !at(TokKind::End)) {
      if (cur_.kind != TokKind::Ident || cur_.text != "step") {
        error(cur_, "expected 'step'");
        bump();
        continue;
      }
      bump();
      parse_step();
    }
    expect(TokKind::RBrace, "'}' closing steps section");
  }

  void parse_step() {
    Step step;
    int step_line = cur_.line;
    if (cur_.kind == TokKind::String) {
      if (!cur_.text.empty() && cur_.text[0] == '\x01')
        error(cur_, "unterminated string literal");
      else
        step.name = cur_.text;
      bump();
    } else {
      error(cur_, "expected quoted step name");
    }
    expect(TokKind::LBrace, "'{' after step name");
    while (!at(TokKind::RBrace) && !at(TokKind::End)) {
      if (cur_.kind != TokKind::Ident) {
        error(cur_, "expected clause (actions, pre, add, del)");
        bump();
        continue;
      }
      std::string clause = cur_.text;
      bump();
      expect(TokKind::Colon, "':' after clause name");
      if (clause == "actions") {
        step.actions = parse_action_list();
      } else if (clause == "pre") {
        step.preconditions = parse_predicate_list();
      } else if (clause == "add") {
        step.add_effects = parse_predicate_list();
      } else if (clause == "del") {
        step.del_effects = parse_predicate_list();
      } else {
        error(cur_, "unknown clause '" + clause + "'");
        parse_predicate_list();  // skip over it
      }
    }
    expect(TokKind::RBrace, "'}' closing step");
    Configuration::canonicalize(step.preconditions);
    Configuration::canonicalize(step.add_effects);
    Configuration::canonicalize(step.del_effects);
    step_lines_[step.name] = step_line;
    task_.steps.push_back(std::move(step));
  }

  std::vector<ActionInstance> parse_action_list() {
    std::vector<ActionInstance> out;
    do {
      if (cur_.kind != TokKind::Ident) {
        error(cur_, "expected action name");
        break;
      }
      ActionInstance a;
      a.name = cur_.text;
      int line = cur_.line;
      bump();
      expect(TokKind::LParen, "'(' after action name");
      while (cur_.kind == TokKind::Ident) {
        a.args.push_back(cur_.text);
        ref_lines_.push_back({cur_.text, cur_.line});
        bump();
        if (!accept(TokKind::Comma)) break;
      }
      expect(TokKind::RParen, "')' closing action arguments");
      action_lines_.push_back({a.name, line});
      out.push_back(std::move(a));
    } while (accept(TokKind::Comma));
    return out;
  }

  std::vector<Predicate> parse_predicate_list() {
    std::vector<Predicate> out;
    do {
      auto p = parse_one_predicate();
      if (!p) break;
      out.push_back(std::move(*p));
    } while (accept(TokKind::Comma));
    return out;
  }

  std::optional<Predicate> parse_one_predicate() {
    if (cur_.kind != TokKind::Ident) {
      error(cur_, "expected predicate");
      return std::nullopt;
    }
    Predicate p;
    p.name = cur_.text;
    pred_use_lines_.push_back({p.name, cur_.line, 0});
    std::size_t use_index = pred_use_lines_.size() - 1;
    bump();
    expect(TokKind::LParen, "'(' after predicate name");
    while (cur_.kind == TokKind::Ident) {
      p.args.push_back(cur_.text);
      ref_lines_.push_back({cur_.text, cur_.line});
      bump();
      if (!accept(TokKind::Comma)) break;
    }
    expect(TokKind::RParen, "')' closing predicate arguments");
    pred_use_lines_[use_index].arity = static_cast<int>(p.args.size());
    return p;
  }

  Configuration parse_predicate_block() {
    expect(TokKind::LBrace, "'{'");
    std::vector<Predicate> preds;
    while (!at(TokKind::RBrace) && !at(TokKind::End)) {
      auto p = parse_one_predicate();
      if (!p) {
        bump();
        continue;
      }
      preds.push_back(std::move(*p));
      accept(TokKind::Comma);  // optional separators
    }
    expect(TokKind::RBrace, "'}'");
    return Configuration(std::move(preds));
  }

  // Semantic checks, reported with the source line of the offending use.
  void validate() {
    std::set<std::string> names;
    bool have_element = false, have_tray = false;
    for (const auto& o : task_.objects) {
      if (!names.insert(o.name).second)
        diags_.push_back({object_lines_[o.name], 1, "duplicate object name '" + o.name + "'"});
      (o.kind == ObjectKind::Element ? have_element : have_tray) = true;
    }
    if (!task_.objects.empty()) {
      if (!have_element) diags_.push_back({1, 1, "task declares no elements"});
      if (!have_tray) diags_.push_back({1, 1, "task declares no trays"});
    } else {
      diags_.push_back({1, 1, "missing objects section"});
    }

    std::map<std::string, int> arity;
    for (const auto& s : task_.predicate_schemas) {
      if (arity.count(s.name))
        diags_.push_back({schema_lines_[s.name], 1, "duplicate predicate schema '" + s.name + "'"});
      if (s.arity < 1 || s.arity > 2)
        diags_.push_back({schema_lines_[s.name], 1,
                          "predicate '" + s.name + "' has unsupported arity " + std::to_string(s.arity)});
      arity[s.name] = s.arity;
    }

    for (const auto& [obj, line] : ref_lines_) {
      if (!names.count(obj))
        diags_.push_back({line, 1, "reference to undeclared object '" + obj + "'"});
    }
    for (const auto& use : pred_use_lines_) {
      auto it = arity.find(use.name);
      if (it == arity.end()) {
        diags_.push_back({use.line, 1, "use of undeclared predicate '" + use.name + "'"});
      } else if (it->second != use.arity) {
        diags_.push_back({use.line, 1,
                          "predicate '" + use.name + "' declared with arity " +
                              std::to_string(it->second) + " but used with " +
                              std::to_string(use.arity) + " arguments"});
      }
    }
    for (const auto& [act, line] : action_lines_) {
      if (!is_elementary_action(act))
        diags_.push_back({line, 1, "unknown elementary action '" + act + "'"});
    }

    std::set<std::string> step_names;
    for (const auto& s : task_.steps) {
      if (!step_names.insert(s.name).second)
        diags_.push_back({step_lines_[s.name], 1, "duplicate step name \"" + s.name + "\""});
      for (const auto& p : s.add_effects) {
        if (std::find(s.del_effects.begin(), s.del_effects.end(), p) != s.del_effects.end())
          diags_.push_back({step_lines_[s.name], 1,
                            "step \"" + s.name + "\" lists " + p.to_string() + " in both add and del"});
      }
    }
  }

  struct PredUse {
    std::string name;
    int line;
    int arity;
  };

  detail::TaskLexer lexer_;
  detail::Token cur_;
  TaskDefinition task_;
  std::vector<Diagnostic> diags_;
  std::map<std::string, int> object_lines_;
  std::map<std::string, int> schema_lines_;
  std::map<std::string, int> step_lines_;
  std::vector<std::pair<std::string, int>> ref_lines_;
  std::vector<std::pair<std::string, int>> action_lines_;
  std::vector<PredUse> pred_use_lines_;
};

inline ParseResult parse_task_definition(std::string_view text) {
  return TaskParser(text).parse();
}

namespace detail {

inline std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_predicate_list(std::ostream& os, const char* label,
                                 const std::vector<Predicate>& ps) {
  if (ps.empty()) return;
  os << "    " << label << ": ";
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (i) os << ", ";
    os << ps[i].to_string();
  }
  os << "\n";
}

}  // namespace detail

// Canonical, byte-stable serialization: LF endings, two-space indent,
// predicate sets in canonical order. parse(serialize(parse(x))) is
// structurally identical to parse(x).
inline std::string serialize_task_definition(const TaskDefinition& task) {
  std::ostringstream os;
  os << "objects {\n";
  for (const auto& o : task.objects)
    os << "  " << (o.kind == ObjectKind::Element ? "element " : "tray ") << o.name << "\n";
  os << "}\n\n";

  os << "predicates {\n";
  for (const auto& s : task.predicate_schemas)
    os << "  " << s.name << "/" << s.arity << "\n";
  os << "}\n\n";

  os << "steps {\n";
  for (const auto& st : task.steps) {
    os << "  step " << detail::quote(st.name) << " {\n";
    if (!st.actions.empty()) {
      os << "    actions: ";
      for (std::size_t i = 0; i < st.actions.size(); ++i) {
        if (i) os << ", ";
        os << st.actions[i].to_string();
      }
      os << "\n";
    }
    detail::write_predicate_list(os, "pre", st.preconditions);
    detail::write_predicate_list(os, "add", st.add_effects);
    detail::write_predicate_list(os, "del", st.del_effects);
    os << "  }\n";
  }
  os << "}\n\n";

  os << "initial {\n";
  for (const auto& p : task.initial.predicates()) os << "  " << p.to_string() << "\n";
  os << "}\n\n";
  os << "final {\n";
  for (const auto& p : task.final_state.predicates()) os << "  " << p.to_string() << "\n";
  os << "}\n";
  return os.str();
}

inline ParseResult load_task_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    ParseResult r;
    r.diagnostics.push_back({0, 0, "cannot open task file: " + path});
    return r;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_task_definition(ss.str());
}

// Convenience for callers that treat parse failure as fatal.
inline TaskDefinition load_task_or_throw(const std::string& path) {
  auto r = load_task_file(path);
  if (!r.ok()) {
    std::string msg = "invalid task file " + path + ":";
    for (const auto& d : r.diagnostics) msg += "\n  " + d.to_string();
    throw ValidationError(msg);
  }
  return std::move(*r.task);
}

}  // namespace vimat
