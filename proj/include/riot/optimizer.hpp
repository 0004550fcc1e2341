#pragma once

#include <riot/buffer_pool.hpp>
#include <riot/expr.hpp>
#include <riot/tiled_store.hpp>

#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace riot {

// ---------------------------------------------------------------------------
// Rewrites

/// A local rewrite on a Gather node. `apply` returns null when the rule does
/// not match. `push` continues pushing a gather into a subtree.
struct RewriteRule {
  using Push = std::function<NodePtr(const NodePtr& x, const NodePtr& index)>;
  std::string name;
  std::function<NodePtr(const NodePtr& x, const NodePtr& index, const Push& push)> apply;
};

/// The gather pushdown rules, in the order they are tried.
const std::vector<RewriteRule>& gather_rules();

struct RewriteStats {
  std::vector<std::pair<std::string, int>> fired;  // rule name, times applied
  int total() const;
};

/// Push every Gather below elementwise operators, Compare and Subst down to
/// the nearest stored, sampled or multiplied operand. Shared subgraphs stay
/// shared. Never pushes through MatMul.
NodePtr push_gather(const NodePtr& root, RewriteStats* stats = nullptr);

// ---------------------------------------------------------------------------
// Matrix chains

/// A parenthesization of A_1 ... A_n where A_i is dims[i-1] x dims[i].
template <typename Dim>
struct ChainPlan {
  struct Step {
    int first;        // first matrix, 0-based
    int last;         // last matrix, inclusive
    int left = -1;    // child steps; -1 for a single matrix
    int right = -1;
  };

  std::vector<Dim> dims;
  std::vector<Step> steps;
  int root = -1;
  Dim multiplications = 0;  // N

  int size() const { return static_cast<int>(dims.size()) - 1; }
  bool is_leaf(int s) const { return steps[static_cast<std::size_t>(s)].left < 0; }

  /// e.g. "A(BC)" for names {"A","B","C"}; defaults to A1..An.
  std::string parenthesization(const std::vector<std::string>& names = {}) const;

  /// Sum over multiplications of rows * inner * cols.
  Dim count_multiplications() const;

  /// Build a plan from a split function: split(first, last) gives the index
  /// of the last matrix of the left factor.
  static ChainPlan from_splits(std::vector<Dim> dims, const std::function<int(int, int)>& split);
  /// ((A1 A2) A3) ...: program order.
  static ChainPlan left_deep(std::vector<Dim> dims);
};

/// Minimum-multiplication parenthesization by dynamic programming. Ties go to
/// the more left-deep tree (the later split).
template <typename Dim>
ChainPlan<Dim> order_chain(std::span<const Dim> dims);

// ---------------------------------------------------------------------------
// Physical plans

enum class PhysKind { Scan, Pipeline, GatherExec, BlockedMatMul, Materialize, SampleExec };
const char* to_string(PhysKind k);

/// One step of a fused per-element program. Slot i holds the result of step i.
struct PipelineStep {
  enum class Op { Input, Gather, RangeValue, Const, Unary, Binary, Compare, Subst };
  Op op = Op::Const;
  int a = -1;      // operand slots
  int b = -1;
  int input = -1;  // Input: stored input; Gather: GatherExec input
  double value = 0.0;
  Index lo = 0;
  Index step = 1;
  UnaryOp unary = UnaryOp::Sqrt;
  BinaryOp binary = BinaryOp::Add;
  CompareOp compare = CompareOp::Gt;

  bool is_arithmetic() const {
    return op == Op::Unary || op == Op::Binary || op == Op::Compare || op == Op::Subst;
  }
};

struct PhysNode;
using PhysPtr = std::shared_ptr<PhysNode>;

struct PhysNode {
  PhysKind kind = PhysKind::Scan;
  NodePtr expr;      // logical node computed; null for reordered chain intermediates
  Shape shape;
  std::vector<PhysPtr> inputs;
  std::string label;

  // Tiling of the stored result (Scan, Materialize, BlockedMatMul, SampleExec),
  // or the iteration tiling (Pipeline).
  TileSpec tiles;
  MatrixPtr matrix;  // Scan

  std::vector<PipelineStep> program;  // Pipeline
  int output_slot = -1;

  // GatherExec: the source is inputs[0] when stored, otherwise a virtual
  // range or constant described here.
  enum class GatherSource { Stored, Range, Const } gather_source = GatherSource::Stored;
  Index source_lo = 0;
  Index source_step = 1;
  Index source_size = 0;
  double source_value = 0.0;

  Index p = 0;  // BlockedMatMul submatrix side

  bool temporary = false;   // Materialize: freed after its consumer finishes
  bool conversion = false;  // Materialize: relayout of an existing stored matrix

  std::uint64_t estimated_blocks = 0;  // this node's own reads + writes

  bool produces_stored() const { return kind != PhysKind::Pipeline && kind != PhysKind::GatherExec; }
  int arithmetic_steps() const;
};

struct PlanOptions {
  bool optimize = true;  // gather pushdown and chain reordering
};

struct PhysicalPlan {
  NodePtr logical;    // DAG as written
  NodePtr optimized;  // after rewrites
  PhysPtr root;
  ResourceBudget budget;
  Index p = 0;
  RewriteStats rewrites;
  std::vector<std::string> chain_orders;
};

/// Submatrix side for the blocked schedule: whole square tiles, three
/// submatrices resident at once.
Index matmul_submatrix_side(const ResourceBudget& budget);

PhysicalPlan plan(const NodePtr& root, const ResourceBudget& budget, PlanOptions options = {});

struct IoEstimate {
  std::vector<std::pair<const PhysNode*, std::uint64_t>> per_node;
  std::uint64_t total = 0;
};

/// Closed-form block counts per node (data blocks only) and their sum.
IoEstimate estimate_io(const PhysicalPlan& plan);
/// (2 * tiles_per_sub * ceil(l/p) + tiles_per_sub) * ceil(m/p) * ceil(n/p),
/// counted tile by tile so partial edge submatrices are exact.
std::uint64_t blocked_matmul_blocks(Index m, Index l, Index n, const ResourceBudget& budget);

/// Indented plan tree with per-node estimates.
std::string render_plan(const PhysicalPlan& plan);

// ---------------------------------------------------------------------------
// Template definitions

template <typename Dim>
std::string ChainPlan<Dim>::parenthesization(const std::vector<std::string>& names) const {
  std::function<std::string(int, bool)> go = [&](int s, bool top) -> std::string {
    const Step& st = steps[static_cast<std::size_t>(s)];
    if (st.left < 0) {
      if (static_cast<std::size_t>(st.first) < names.size()) return names[static_cast<std::size_t>(st.first)];
      return "A" + std::to_string(st.first + 1);
    }
    std::string inner = go(st.left, false) + go(st.right, false);
    return top ? inner : "(" + inner + ")";
  };
  return root < 0 ? std::string() : go(root, true);
}

template <typename Dim>
Dim ChainPlan<Dim>::count_multiplications() const {
  Dim total = 0;
  for (const Step& st : steps) {
    if (st.left < 0) continue;
    const Step& l = steps[static_cast<std::size_t>(st.left)];
    total += dims[static_cast<std::size_t>(st.first)] * dims[static_cast<std::size_t>(l.last + 1)] *
             dims[static_cast<std::size_t>(st.last + 1)];
  }
  return total;
}

template <typename Dim>
ChainPlan<Dim> ChainPlan<Dim>::from_splits(std::vector<Dim> dims,
                                           const std::function<int(int, int)>& split) {
  ChainPlan plan;
  plan.dims = std::move(dims);
  std::function<int(int, int)> build = [&](int first, int last) -> int {
    Step st{first, last};
    if (first < last) {
      const int k = split(first, last);
      st.left = build(first, k);
      st.right = build(k + 1, last);
    }
    plan.steps.push_back(st);
    return static_cast<int>(plan.steps.size()) - 1;
  };
  if (plan.size() >= 1) plan.root = build(0, plan.size() - 1);
  plan.multiplications = plan.count_multiplications();
  return plan;
}

template <typename Dim>
ChainPlan<Dim> ChainPlan<Dim>::left_deep(std::vector<Dim> dims) {
  return from_splits(std::move(dims), [](int, int last) { return last - 1; });
}

template <typename Dim>
ChainPlan<Dim> order_chain(std::span<const Dim> dims) {
  const int n = static_cast<int>(dims.size()) - 1;
  if (n < 1) {
    ChainPlan<Dim> empty;
    empty.dims.assign(dims.begin(), dims.end());
    return empty;
  }
  const auto N = static_cast<std::size_t>(n);
  std::vector<Dim> cost(N * N, Dim{0});
  std::vector<int> split(N * N, -1);
  auto at = [N](int i, int j) { return static_cast<std::size_t>(i) * N + static_cast<std::size_t>(j); };
  auto d = [&](int i) { return dims[static_cast<std::size_t>(i)]; };
  for (int len = 2; len <= n; ++len) {
    for (int i = 0; i + len - 1 < n; ++i) {
      const int j = i + len - 1;
      bool first = true;
      for (int k = i; k < j; ++k) {
        Dim c = cost[at(i, k)] + cost[at(k + 1, j)] + d(i) * d(k + 1) * d(j + 1);
        if (first || c <= cost[at(i, j)]) {
          cost[at(i, j)] = c;
          split[at(i, j)] = k;
          first = false;
        }
      }
    }
  }
  return ChainPlan<Dim>::from_splits(std::vector<Dim>(dims.begin(), dims.end()),
                                     [&](int i, int j) { return split[at(i, j)]; });
}

}  // namespace riot
