#pragma once

#include <riot/common.hpp>
#include <riot/executor.hpp>
#include <riot/expr.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace riot {

/// Syntax or name-resolution error at a 1-based source position.
class ScriptError : public Error {
 public:
  ScriptError(const std::string& msg, int line, int col)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(col) + ": " + msg),
        line_(line),
        col_(col) {}
  int line() const { return line_; }
  int col() const { return col_; }

 private:
  int line_;
  int col_;
};

struct Ast;
using AstPtr = std::shared_ptr<const Ast>;

struct Ast {
  enum class Kind { Number, Name, Neg, Binary, Call, Index };
  Kind kind = Kind::Number;
  double number = 0.0;
  std::string text;  // Name: identifier; Binary: operator; Call: function
  std::vector<AstPtr> args;
  int line = 0;
  int col = 0;
};

struct Statement {
  enum class Kind { Assign, MaskedAssign, Print };
  Kind kind = Kind::Print;
  std::string name;  // Assign, MaskedAssign
  AstPtr index;      // MaskedAssign: the mask expression
  AstPtr value;      // right-hand side, or the printed expression
  int line = 0;
  int col = 0;
};

struct Script {
  std::vector<Statement> statements;
};

/// Operators, loosest first: comparisons, + -, * /, %*%, :, unary -, ^.
/// Binary operators associate left except ^. Chained assignment is rejected.
Script parse_script(std::string_view text);

/// Operator nodes in an expression tree (arithmetic, comparisons, sqrt,
/// indexing and %*%; ranges and literals are not operators).
std::size_t count_operations(const Ast& e);

/// Lowers scripts to expression DAGs and forces print statements.
///
/// Free names refer to stored matrices `<store>/<name>.riot`; each file is
/// opened once and becomes a single leaf.
class Interpreter {
 public:
  Interpreter(std::filesystem::path store, std::uint64_t default_seed = 42);

  /// Rejects names that are neither bound earlier nor stored. Performs no I/O
  /// beyond checking that files exist.
  void check(const Script& script) const;

  /// Expression DAG for every print statement, in order; binds assignments.
  std::vector<NodePtr> lower(const Script& script);

  /// Evaluate the print statements. Values go to `out` (one row per line,
  /// %.17g) when given.
  std::vector<Eigen::MatrixXd> run(const Script& script, Session& session, std::ostream* out);

  const Environment& environment() const { return env_; }

 private:
  NodePtr lower_expr(const Ast& e);
  NodePtr resolve(const std::string& name, int line, int col);
  double constant_of(const Ast& e, const char* what);
  NodePtr apply(const Statement& st);

  std::filesystem::path store_;
  std::uint64_t default_seed_;
  Environment env_;
  std::map<std::string, NodePtr> leaves_;
};

/// `%.17g` per value, columns separated by one space, one row per line.
void print_matrix(std::ostream& os, const Eigen::MatrixXd& m);

}  // namespace riot
