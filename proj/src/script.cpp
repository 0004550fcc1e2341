#include <riot/script.hpp>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <ostream>
#include <set>

namespace riot {

namespace {

struct Token {
  enum class Kind { Number, Ident, Op, Separator, End };
  Kind kind = Kind::End;
  std::string text;
  double number = 0.0;
  int line = 1;
  int col = 1;
};

std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  int line = 1, col = 1, depth = 0;
  std::size_t i = 0;
  auto advance = [&](std::size_t n) {
    for (std::size_t k = 0; k < n; ++k) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
      ++i;
    }
  };
  while (i < src.size()) {
    const char c = src[i];
    Token t;
    t.line = line;
    t.col = col;
    if (c == '#') {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    if (c == '\n' || c == ';') {
      if (depth == 0 || c == ';') {
        t.kind = Token::Kind::Separator;
        t.text = c == ';' ? ";" : "newline";
        out.push_back(t);
      }
      advance(1);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      advance(1);
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '.' && i + 1 < src.size() && std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
      std::size_t j = i;
      while (j < src.size() && (std::isdigit(static_cast<unsigned char>(src[j])) || src[j] == '.')) ++j;
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k < src.size() && std::isdigit(static_cast<unsigned char>(src[k]))) {
          j = k;
          while (j < src.size() && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
        }
      }
      t.kind = Token::Kind::Number;
      t.text = std::string(src.substr(i, j - i));
      char* end = nullptr;
      t.number = std::strtod(t.text.c_str(), &end);
      if (end != t.text.c_str() + t.text.size()) throw ScriptError("malformed number '" + t.text + "'", line, col);
      out.push_back(t);
      advance(j - i);
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
      std::size_t j = i;
      while (j < src.size() &&
             (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_' || src[j] == '.'))
        ++j;
      t.kind = Token::Kind::Ident;
      t.text = std::string(src.substr(i, j - i));
      out.push_back(t);
      advance(j - i);
      continue;
    }
    static const char* const ops[] = {"%*%", "<-", ">=", "<=", "==", "+", "-", "*", "/", "^", ":",
                                      ">",   "<",  "(",  ")",  "[",  "]", ","};
    bool matched = false;
    for (const char* op : ops) {
      const std::string_view sv(op);
      if (src.substr(i, sv.size()) == sv) {
        t.kind = Token::Kind::Op;
        t.text = std::string(sv);
        if (sv == "(" || sv == "[") ++depth;
        if ((sv == ")" || sv == "]") && depth > 0) --depth;
        out.push_back(t);
        advance(sv.size());
        matched = true;
        break;
      }
    }
    if (!matched) throw ScriptError(std::string("unexpected character '") + c + "'", line, col);
  }
  Token end;
  end.kind = Token::Kind::End;
  end.text = "end of input";
  end.line = line;
  end.col = col;
  out.push_back(end);
  return out;
}

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  Script script() {
    Script s;
    for (;;) {
      while (peek().kind == Token::Kind::Separator) ++pos_;
      if (peek().kind == Token::Kind::End) break;
      s.statements.push_back(statement());
      const Token& t = peek();
      if (t.kind != Token::Kind::Separator && t.kind != Token::Kind::End)
        fail("expected end of statement, found '" + t.text + "'", t);
    }
    return s;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  bool is_op(const char* op, std::size_t ahead = 0) const {
    const Token& t = peek(ahead);
    return t.kind == Token::Kind::Op && t.text == op;
  }
  [[noreturn]] static void fail(const std::string& msg, const Token& t) { throw ScriptError(msg, t.line, t.col); }
  void expect(const char* op) {
    if (!is_op(op)) fail(std::string("expected '") + op + "', found '" + peek().text + "'", peek());
    ++pos_;
  }
  void skip_newlines() {
    while (peek().kind == Token::Kind::Separator && peek().text == "newline") ++pos_;
  }

  static AstPtr node(Ast::Kind k, const Token& at, std::string text = {}, std::vector<AstPtr> args = {}) {
    auto a = std::make_shared<Ast>();
    a->kind = k;
    a->text = std::move(text);
    a->args = std::move(args);
    a->line = at.line;
    a->col = at.col;
    return a;
  }

  Statement statement() {
    const Token start = peek();
    Statement st;
    st.line = start.line;
    st.col = start.col;
    if (start.kind == Token::Kind::Ident && start.text == "print" && !is_op("<-", 1)) {
      ++pos_;
      st.kind = Statement::Kind::Print;
      st.value = expr();
      return st;
    }
    AstPtr lhs = expr();
    if (!is_op("<-")) fail("expression has no effect; use print() to evaluate it", start);
    const Token arrow = peek();
    ++pos_;
    skip_newlines();
    st.value = expr();
    if (is_op("<-")) fail("chained assignment is not supported", peek());
    if (lhs->kind == Ast::Kind::Name) {
      st.kind = Statement::Kind::Assign;
      st.name = lhs->text;
    } else if (lhs->kind == Ast::Kind::Index && lhs->args[0]->kind == Ast::Kind::Name) {
      st.kind = Statement::Kind::MaskedAssign;
      st.name = lhs->args[0]->text;
      st.index = lhs->args[1];
    } else {
      fail("left side of '<-' must be a name or name[mask]", arrow);
    }
    return st;
  }

  AstPtr expr() { return comparison(); }

  AstPtr binary_level(AstPtr (Parser::*next)(), std::initializer_list<const char*> ops) {
    AstPtr lhs = (this->*next)();
    for (;;) {
      const char* hit = nullptr;
      for (const char* op : ops)
        if (is_op(op)) hit = op;
      if (!hit) return lhs;
      const Token at = peek();
      ++pos_;
      skip_newlines();
      AstPtr rhs = (this->*next)();
      lhs = node(Ast::Kind::Binary, at, hit, {lhs, rhs});
    }
  }

  AstPtr comparison() { return binary_level(&Parser::additive, {">", ">=", "<", "<=", "=="}); }
  AstPtr additive() { return binary_level(&Parser::multiplicative, {"+", "-"}); }
  AstPtr multiplicative() { return binary_level(&Parser::matrix_product, {"*", "/"}); }
  AstPtr matrix_product() { return binary_level(&Parser::sequence, {"%*%"}); }
  AstPtr sequence() { return binary_level(&Parser::negation, {":"}); }

  AstPtr negation() {
    if (is_op("-")) {
      const Token at = peek();
      ++pos_;
      return node(Ast::Kind::Neg, at, "-", {negation()});
    }
    if (is_op("+")) {
      ++pos_;
      return negation();
    }
    return power();
  }

  AstPtr power() {
    AstPtr base = postfix();
    if (!is_op("^")) return base;
    const Token at = peek();
    ++pos_;
    skip_newlines();
    return node(Ast::Kind::Binary, at, "^", {base, negation()});
  }

  AstPtr postfix() {
    AstPtr e = primary();
    while (is_op("[")) {
      const Token at = peek();
      ++pos_;
      AstPtr idx = expr();
      expect("]");
      e = node(Ast::Kind::Index, at, "[", {e, idx});
    }
    return e;
  }

  AstPtr primary() {
    const Token t = peek();
    switch (t.kind) {
      case Token::Kind::Number: {
        ++pos_;
        auto a = node(Ast::Kind::Number, t, t.text);
        std::const_pointer_cast<Ast>(a)->number = t.number;
        return a;
      }
      case Token::Kind::Ident: {
        ++pos_;
        if (!is_op("(")) return node(Ast::Kind::Name, t, t.text);
        ++pos_;
        std::vector<AstPtr> args;
        if (!is_op(")")) {
          args.push_back(expr());
          while (is_op(",")) {
            ++pos_;
            args.push_back(expr());
          }
        }
        expect(")");
        return node(Ast::Kind::Call, t, t.text, std::move(args));
      }
      case Token::Kind::Op:
        if (t.text == "(") {
          ++pos_;
          AstPtr e = expr();
          expect(")");
          return e;
        }
        break;
      default: break;
    }
    fail("unexpected '" + t.text + "'", t);
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
};

bool is_constant(const NodePtr& n) { return n->kind() == NodeKind::ScalarConst; }

}  // namespace

Script parse_script(std::string_view text) { return Parser(tokenize(text)).script(); }

std::size_t count_operations(const Ast& e) {
  std::size_t n = 0;
  switch (e.kind) {
    case Ast::Kind::Binary: n = e.text == ":" ? 0 : 1; break;
    case Ast::Kind::Neg:
    case Ast::Kind::Index: n = 1; break;
    case Ast::Kind::Call: n = e.text == "sqrt" ? 1 : 0; break;
    default: break;
  }
  for (const auto& a : e.args) n += count_operations(*a);
  return n;
}

Interpreter::Interpreter(std::filesystem::path store, std::uint64_t default_seed)
    : store_(std::move(store)), default_seed_(default_seed) {}

void Interpreter::check(const Script& script) const {
  std::set<std::string> defined;
  for (const auto& [name, node] : leaves_) defined.insert(name);
  auto known = [&](const std::string& name) {
    return defined.count(name) || env_.contains(name) ||
           std::filesystem::exists(store_ / (name + ".riot"));
  };
  std::function<void(const Ast&)> walk = [&](const Ast& e) {
    if (e.kind == Ast::Kind::Name && !known(e.text))
      throw ScriptError("undefined name '" + e.text + "'", e.line, e.col);
    for (const auto& a : e.args) walk(*a);
  };
  for (const auto& st : script.statements) {
    walk(*st.value);
    if (st.kind == Statement::Kind::MaskedAssign) {
      walk(*st.index);
      if (!known(st.name)) throw ScriptError("undefined name '" + st.name + "'", st.line, st.col);
    }
    if (st.kind != Statement::Kind::Print) defined.insert(st.name);
  }
}

NodePtr Interpreter::resolve(const std::string& name, int line, int col) {
  if (env_.contains(name)) return env_.lookup(name);
  if (auto it = leaves_.find(name); it != leaves_.end()) return it->second;
  const auto path = store_ / (name + ".riot");
  if (!std::filesystem::exists(path)) throw ScriptError("undefined name '" + name + "'", line, col);
  NodePtr n = leaf(StoredMatrix::open(path), name);
  leaves_.emplace(name, n);
  return n;
}

double Interpreter::constant_of(const Ast& e, const char* what) {
  NodePtr n = lower_expr(e);
  if (!is_constant(n)) throw ScriptError(std::string(what) + " must be a constant", e.line, e.col);
  return n->scalar();
}

namespace {

Index integral(double v, const Ast& at, const char* what) {
  if (v != std::floor(v) || std::fabs(v) > 9007199254740992.0)
    throw ScriptError(std::string(what) + " must be an integer", at.line, at.col);
  return static_cast<Index>(v);
}

double fold_binary(const std::string& op, double a, double b) {
  if (op == "+") return a + b;
  if (op == "-") return a - b;
  if (op == "*") return a * b;
  if (op == "/") return a / b;
  if (op == "^") return std::pow(a, b);
  if (op == ">") return a > b;
  if (op == ">=") return a >= b;
  if (op == "<") return a < b;
  if (op == "<=") return a <= b;
  return a == b;
}

}  // namespace

NodePtr Interpreter::lower_expr(const Ast& e) {
  try {
    switch (e.kind) {
      case Ast::Kind::Number:
        return constant(e.number);
      case Ast::Kind::Name:
        return resolve(e.text, e.line, e.col);
      case Ast::Kind::Neg: {
        NodePtr x = lower_expr(*e.args[0]);
        return is_constant(x) ? constant(-x->scalar()) : unary(UnaryOp::Negate, x);
      }
      case Ast::Kind::Binary: {
        const std::string& op = e.text;
        if (op == ":") {
          const Index lo = integral(constant_of(*e.args[0], "range bound"), *e.args[0], "range bound");
          const Index hi = integral(constant_of(*e.args[1], "range bound"), *e.args[1], "range bound");
          return range(lo, hi);
        }
        NodePtr l = lower_expr(*e.args[0]);
        NodePtr r = lower_expr(*e.args[1]);
        if (op == "%*%") return matmul(l, r);
        if (is_constant(l) && is_constant(r)) return constant(fold_binary(op, l->scalar(), r->scalar()));
        if (op == "+") return binary(BinaryOp::Add, l, r);
        if (op == "-") return binary(BinaryOp::Sub, l, r);
        if (op == "*") return binary(BinaryOp::Mul, l, r);
        if (op == "/") return binary(BinaryOp::Div, l, r);
        if (op == "^") return binary(BinaryOp::Pow, l, r);
        CompareOp cmp = CompareOp::Eq;
        bool flip = false;
        if (!is_constant(r)) {
          if (!is_constant(l))
            throw ScriptError("comparisons are only supported against a scalar", e.line, e.col);
          std::swap(l, r);
          flip = true;
        }
        if (op == ">") cmp = flip ? CompareOp::Lt : CompareOp::Gt;
        else if (op == ">=") cmp = flip ? CompareOp::Le : CompareOp::Ge;
        else if (op == "<") cmp = flip ? CompareOp::Gt : CompareOp::Lt;
        else if (op == "<=") cmp = flip ? CompareOp::Ge : CompareOp::Le;
        return compare(cmp, l, r->scalar());
      }
      case Ast::Kind::Call: {
        const std::string& fn = e.text;
        auto arity = [&](std::size_t lo, std::size_t hi) {
          if (e.args.size() < lo || e.args.size() > hi)
            throw ScriptError(fn + "() takes " + std::to_string(lo) +
                                  (hi > lo ? " to " + std::to_string(hi) : std::string()) + " arguments",
                              e.line, e.col);
        };
        if (fn == "sqrt") {
          arity(1, 1);
          NodePtr x = lower_expr(*e.args[0]);
          return is_constant(x) ? constant(std::sqrt(x->scalar())) : unary(UnaryOp::Sqrt, x);
        }
        if (fn == "length") {
          arity(1, 1);
          return constant(static_cast<double>(lower_expr(*e.args[0])->shape().size()));
        }
        if (fn == "sample") {
          arity(2, 3);
          const Index n = integral(constant_of(*e.args[0], "sample size"), *e.args[0], "population");
          const Index k = integral(constant_of(*e.args[1], "sample size"), *e.args[1], "sample size");
          std::uint64_t seed = default_seed_;
          if (e.args.size() == 3)
            seed = static_cast<std::uint64_t>(integral(constant_of(*e.args[2], "seed"), *e.args[2], "seed"));
          return sample(n, k, seed);
        }
        throw ScriptError("unknown function '" + fn + "'", e.line, e.col);
      }
      case Ast::Kind::Index: {
        NodePtr x = lower_expr(*e.args[0]);
        NodePtr idx = lower_expr(*e.args[1]);
        if (idx->is_mask())
          throw ScriptError("logical indexing is only supported in masked assignment", e.line, e.col);
        if (is_constant(idx)) idx = range(integral(idx->scalar(), *e.args[1], "index"),
                                          integral(idx->scalar(), *e.args[1], "index"));
        return gather(x, idx);
      }
    }
  } catch (const ShapeError& err) {
    throw ScriptError(err.what(), e.line, e.col);
  }
  throw ScriptError("unsupported expression", e.line, e.col);
}

NodePtr Interpreter::apply(const Statement& st) {
  switch (st.kind) {
    case Statement::Kind::Assign:
      env_.assign(st.name, lower_expr(*st.value));
      return nullptr;
    case Statement::Kind::MaskedAssign: {
      NodePtr target = resolve(st.name, st.line, st.col);
      NodePtr mask = lower_expr(*st.index);
      NodePtr value = lower_expr(*st.value);
      if (!mask->is_mask())
        throw ScriptError("only comparison masks may be assigned through; general index assignment is "
                          "not supported",
                          st.index->line, st.index->col);
      if (!is_constant(value))
        throw ScriptError("masked assignment needs a scalar replacement", st.value->line, st.value->col);
      try {
        env_.assign(st.name, subst(target, mask, value->scalar()));
      } catch (const ShapeError& err) {
        throw ScriptError(err.what(), st.line, st.col);
      }
      return nullptr;
    }
    case Statement::Kind::Print:
      return lower_expr(*st.value);
  }
  return nullptr;
}

std::vector<NodePtr> Interpreter::lower(const Script& script) {
  check(script);
  std::vector<NodePtr> out;
  for (const auto& st : script.statements)
    if (NodePtr n = apply(st)) out.push_back(n);
  return out;
}

std::vector<Eigen::MatrixXd> Interpreter::run(const Script& script, Session& session, std::ostream* out) {
  check(script);
  std::vector<Eigen::MatrixXd> values;
  for (const auto& st : script.statements) {
    NodePtr n = apply(st);
    if (!n) continue;
    values.push_back(session.evaluate(n));
    if (out) print_matrix(*out, values.back());
  }
  return values;
}

void print_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  char buf[40];
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m(r, c));
      if (c) os << ' ';
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace riot
