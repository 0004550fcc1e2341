#pragma once

#include <riot/common.hpp>
#include <riot/tiled_store.hpp>

#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

namespace riot {

enum class NodeKind {
  Leaf,
  ScalarConst,
  ElemUnary,
  ElemBinary,
  Compare,
  Gather,
  Range,
  Subst,
  MatMul,
  Sample,
};

enum class UnaryOp { Sqrt, Square, Negate };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };
enum class CompareOp { Gt, Ge, Lt, Le, Eq };

const char* to_string(NodeKind k);
const char* to_string(UnaryOp op);
const char* to_string(BinaryOp op);
const char* to_string(CompareOp op);

using NodeId = std::uint64_t;
class Node;
using NodePtr = std::shared_ptr<const Node>;

/// One immutable vertex of the deferred-evaluation DAG.
///
/// Construction performs no I/O and no arithmetic. Indices carried by Gather,
/// Range and Sample are 1-based; Gather positions address the child in
/// column-major order.
class Node {
 public:
  NodeId id() const { return id_; }
  NodeKind kind() const { return kind_; }
  const Shape& shape() const { return shape_; }
  const std::vector<NodePtr>& children() const { return children_; }
  const NodePtr& child(std::size_t i) const { return children_.at(i); }

  /// ScalarConst value, Compare threshold, or Subst replacement.
  double scalar() const { return scalar_; }
  UnaryOp unary_op() const { return unary_; }
  BinaryOp binary_op() const { return binary_; }
  CompareOp compare_op() const { return compare_; }

  Index range_lo() const { return lo_; }
  Index range_hi() const { return hi_; }
  Index sample_population() const { return lo_; }
  Index sample_count() const { return hi_; }
  std::uint64_t sample_seed() const { return seed_; }

  const MatrixPtr& matrix() const { return matrix_; }
  const std::string& name() const { return name_; }

  bool is_elementwise() const {
    return kind_ == NodeKind::ElemUnary || kind_ == NodeKind::ElemBinary ||
           kind_ == NodeKind::Compare || kind_ == NodeKind::Subst;
  }
  /// True for nodes a 0/1 mask may be built from.
  bool is_mask() const;

  friend NodePtr leaf(MatrixPtr m, std::string name);
  friend NodePtr constant(double v);
  friend NodePtr unary(UnaryOp op, NodePtr x);
  friend NodePtr binary(BinaryOp op, NodePtr l, NodePtr r);
  friend NodePtr compare(CompareOp op, NodePtr x, double threshold);
  friend NodePtr gather(NodePtr x, NodePtr index);
  friend NodePtr range(Index lo, Index hi);
  friend NodePtr subst(NodePtr x, NodePtr mask, double replacement);
  friend NodePtr matmul(NodePtr l, NodePtr r);
  friend NodePtr sample(Index n, Index k, std::uint64_t seed);

 private:
  explicit Node(NodeKind kind);

  NodeId id_;
  NodeKind kind_;
  Shape shape_;
  std::vector<NodePtr> children_;
  double scalar_ = 0.0;
  UnaryOp unary_ = UnaryOp::Sqrt;
  BinaryOp binary_ = BinaryOp::Add;
  CompareOp compare_ = CompareOp::Gt;
  Index lo_ = 0;
  Index hi_ = 0;
  std::uint64_t seed_ = 0;
  MatrixPtr matrix_;
  std::string name_;
};

// Builders. Each validates shapes and throws ShapeError with both shapes.
NodePtr leaf(MatrixPtr m, std::string name);
NodePtr constant(double v);
NodePtr unary(UnaryOp op, NodePtr x);
/// Children must have equal shapes unless one of them is a ScalarConst.
NodePtr binary(BinaryOp op, NodePtr l, NodePtr r);
NodePtr compare(CompareOp op, NodePtr x, double threshold);
NodePtr gather(NodePtr x, NodePtr index);
/// lo:hi, descending when hi < lo.
NodePtr range(Index lo, Index hi);
/// mask ? replacement : x. The mask must be a Compare or a product of masks.
NodePtr subst(NodePtr x, NodePtr mask, double replacement);
NodePtr matmul(NodePtr l, NodePtr r);
/// k distinct indices drawn uniformly from 1..n.
NodePtr sample(Index n, Index k, std::uint64_t seed);

/// Same operation and parameters as `n` over new children (rebuilt through the
/// builders, so shapes are re-checked).
NodePtr with_children(const NodePtr& n, std::vector<NodePtr> children);

/// Value wrapper giving node builders an arithmetic surface.
class Expr {
 public:
  Expr(NodePtr n) : node_(std::move(n)) {}  // NOLINT(google-explicit-constructor)
  Expr(double v) : node_(constant(v)) {}    // NOLINT(google-explicit-constructor)

  const NodePtr& node() const { return node_; }
  const Shape& shape() const { return node_->shape(); }
  operator const NodePtr&() const { return node_; }  // NOLINT(google-explicit-constructor)

  Expr operator[](const Expr& index) const { return gather(node_, index.node_); }

 private:
  NodePtr node_;
};

inline Expr operator+(const Expr& a, const Expr& b) { return binary(BinaryOp::Add, a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return binary(BinaryOp::Sub, a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return binary(BinaryOp::Mul, a, b); }
inline Expr operator/(const Expr& a, const Expr& b) { return binary(BinaryOp::Div, a, b); }
inline Expr operator-(const Expr& a) { return unary(UnaryOp::Negate, a); }
inline Expr operator>(const Expr& a, double t) { return compare(CompareOp::Gt, a, t); }
inline Expr operator>=(const Expr& a, double t) { return compare(CompareOp::Ge, a, t); }
inline Expr operator<(const Expr& a, double t) { return compare(CompareOp::Lt, a, t); }
inline Expr operator<=(const Expr& a, double t) { return compare(CompareOp::Le, a, t); }
inline Expr operator==(const Expr& a, double t) { return compare(CompareOp::Eq, a, t); }
inline Expr pow(const Expr& a, const Expr& b) { return binary(BinaryOp::Pow, a, b); }
inline Expr sqrt(const Expr& a) { return unary(UnaryOp::Sqrt, a); }
inline Expr square(const Expr& a) { return unary(UnaryOp::Square, a); }
inline Expr matmul(const Expr& a, const Expr& b) { return matmul(a.node(), b.node()); }

/// Nodes reachable from `root`, children before parents, each once.
std::vector<NodePtr> topological_order(const NodePtr& root);

/// Number of distinct parents referencing each node under `root`.
std::unordered_map<NodeId, int> consumer_counts(const NodePtr& root);

/// Distinct operation nodes (elementwise, Gather, MatMul) under `root`.
std::size_t count_operations(const NodePtr& root);
/// Operation nodes other than the root itself: the temporaries an eager
/// interpreter would allocate.
std::size_t count_intermediates(const NodePtr& root);

/// One node per line, children first:  `n<id> <Kind>[<detail>] (<child ids>) <rows>x<cols>`.
std::string dump_dag(const NodePtr& root);

/// Name bindings over immutable nodes. Rebinding never touches nodes captured
/// elsewhere, so earlier bindings keep their meaning.
class Environment {
 public:
  void assign(const std::string& name, NodePtr node);
  const NodePtr& lookup(const std::string& name) const;
  bool contains(const std::string& name) const { return bindings_.count(name) != 0; }

  /// Ids of every node the binding transitively references, itself included.
  const std::set<NodeId>& dependencies(const std::string& name) const;
  /// Names of stored matrices the binding reads.
  std::set<std::string> leaf_inputs(const std::string& name) const;

 private:
  struct Binding {
    NodePtr node;
    std::set<NodeId> deps;
  };
  std::map<std::string, Binding> bindings_;
};

/// k distinct values from 1..n (splitmix64 + partial Fisher-Yates over a
/// virtual range).
std::vector<Index> sample_indices(Index n, Index k, std::uint64_t seed);

struct SplitMix64 {
  std::uint64_t state;
  std::uint64_t operator()() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
};

/// Deterministic uniform [0,1) value for element (row, col) of a generated matrix.
double uniform_at(std::uint64_t seed, Index row, Index col);

}  // namespace riot
