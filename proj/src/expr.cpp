#include <riot/expr.hpp>

#include <atomic>
#include <functional>
#include <sstream>
#include <unordered_set>

namespace riot {

namespace {

std::atomic<NodeId> next_node_id{1};

std::string describe(const NodePtr& n) {
  return std::string(to_string(n->kind())) + " " + to_string(n->shape());
}

void require(const NodePtr& n, const char* what) {
  if (!n) throw ShapeError(std::string("null operand for ") + what);
}

}  // namespace

const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Leaf: return "Leaf";
    case NodeKind::ScalarConst: return "ScalarConst";
    case NodeKind::ElemUnary: return "ElemUnary";
    case NodeKind::ElemBinary: return "ElemBinary";
    case NodeKind::Compare: return "Compare";
    case NodeKind::Gather: return "Gather";
    case NodeKind::Range: return "Range";
    case NodeKind::Subst: return "Subst";
    case NodeKind::MatMul: return "MatMul";
    case NodeKind::Sample: return "Sample";
  }
  return "?";
}

const char* to_string(UnaryOp op) {
  switch (op) {
    case UnaryOp::Sqrt: return "sqrt";
    case UnaryOp::Square: return "square";
    case UnaryOp::Negate: return "negate";
  }
  return "?";
}

const char* to_string(BinaryOp op) {
  switch (op) {
    case BinaryOp::Add: return "add";
    case BinaryOp::Sub: return "sub";
    case BinaryOp::Mul: return "mul";
    case BinaryOp::Div: return "div";
    case BinaryOp::Pow: return "pow";
  }
  return "?";
}

const char* to_string(CompareOp op) {
  switch (op) {
    case CompareOp::Gt: return "gt";
    case CompareOp::Ge: return "ge";
    case CompareOp::Lt: return "lt";
    case CompareOp::Le: return "le";
    case CompareOp::Eq: return "eq";
  }
  return "?";
}

Node::Node(NodeKind kind) : id_(next_node_id++), kind_(kind) {}

bool Node::is_mask() const {
  if (kind_ == NodeKind::Compare) return true;
  if (kind_ == NodeKind::ElemBinary && binary_ == BinaryOp::Mul)
    return children_[0]->is_mask() && children_[1]->is_mask();
  return false;
}

NodePtr leaf(MatrixPtr m, std::string name) {
  if (!m) throw ShapeError("leaf without a stored matrix");
  auto n = std::shared_ptr<Node>(new Node(NodeKind::Leaf));
  n->shape_ = m->shape();
  n->name_ = std::move(name);
  n->matrix_ = std::move(m);
  return n;
}

NodePtr constant(double v) {
  auto n = std::shared_ptr<Node>(new Node(NodeKind::ScalarConst));
  n->shape_ = {1, 1};
  n->scalar_ = v;
  return n;
}

NodePtr unary(UnaryOp op, NodePtr x) {
  require(x, "unary op");
  auto n = std::shared_ptr<Node>(new Node(NodeKind::ElemUnary));
  n->shape_ = x->shape();
  n->unary_ = op;
  n->children_ = {std::move(x)};
  return n;
}

NodePtr binary(BinaryOp op, NodePtr l, NodePtr r) {
  require(l, "binary op");
  require(r, "binary op");
  Shape s;
  if (l->kind() == NodeKind::ScalarConst) {
    s = r->shape();
  } else if (r->kind() == NodeKind::ScalarConst) {
    s = l->shape();
  } else if (l->shape() == r->shape()) {
    s = l->shape();
  } else {
    throw ShapeError(std::string("shape mismatch in ") + to_string(op) + ": " + describe(l) +
                     " vs " + describe(r));
  }
  auto n = std::shared_ptr<Node>(new Node(NodeKind::ElemBinary));
  n->shape_ = s;
  n->binary_ = op;
  n->children_ = {std::move(l), std::move(r)};
  return n;
}

NodePtr compare(CompareOp op, NodePtr x, double threshold) {
  require(x, "compare");
  auto n = std::shared_ptr<Node>(new Node(NodeKind::Compare));
  n->shape_ = x->shape();
  n->compare_ = op;
  n->scalar_ = threshold;
  n->children_ = {std::move(x)};
  return n;
}

NodePtr gather(NodePtr x, NodePtr index) {
  require(x, "gather");
  require(index, "gather");
  if (!index->shape().is_vector()) {
    throw ShapeError("gather index must be a column vector, got " + describe(index));
  }
  if (index->is_mask()) {
    throw ShapeError("logical indexing is only supported in masked assignment");
  }
  auto n = std::shared_ptr<Node>(new Node(NodeKind::Gather));
  n->shape_ = index->shape();
  n->children_ = {std::move(x), std::move(index)};
  return n;
}

NodePtr range(Index lo, Index hi) {
  auto n = std::shared_ptr<Node>(new Node(NodeKind::Range));
  n->shape_ = {(hi >= lo ? hi - lo : lo - hi) + 1, 1};
  n->lo_ = lo;
  n->hi_ = hi;
  return n;
}

NodePtr subst(NodePtr x, NodePtr mask, double replacement) {
  require(x, "subst");
  require(mask, "subst");
  if (!mask->is_mask()) {
    throw ShapeError("masked assignment needs a comparison mask, got " + describe(mask));
  }
  if (mask->shape() != x->shape()) {
    throw ShapeError("mask shape mismatch: " + describe(x) + " vs mask " + describe(mask));
  }
  auto n = std::shared_ptr<Node>(new Node(NodeKind::Subst));
  n->shape_ = x->shape();
  n->scalar_ = replacement;
  n->children_ = {std::move(x), std::move(mask)};
  return n;
}

NodePtr matmul(NodePtr l, NodePtr r) {
  require(l, "matmul");
  require(r, "matmul");
  if (l->shape().cols != r->shape().rows) {
    throw ShapeError("non-conformable matmul: " + describe(l) + " %*% " + describe(r));
  }
  auto n = std::shared_ptr<Node>(new Node(NodeKind::MatMul));
  n->shape_ = {l->shape().rows, r->shape().cols};
  n->children_ = {std::move(l), std::move(r)};
  return n;
}

NodePtr sample(Index n_pop, Index k, std::uint64_t seed) {
  if (n_pop < 0 || k < 0 || k > n_pop) {
    throw ShapeError("cannot draw " + std::to_string(k) + " distinct samples from 1:" +
                     std::to_string(n_pop));
  }
  auto n = std::shared_ptr<Node>(new Node(NodeKind::Sample));
  n->shape_ = {k, 1};
  n->lo_ = n_pop;
  n->hi_ = k;
  n->seed_ = seed;
  return n;
}

NodePtr with_children(const NodePtr& n, std::vector<NodePtr> c) {
  switch (n->kind()) {
    case NodeKind::ElemUnary: return unary(n->unary_op(), c.at(0));
    case NodeKind::ElemBinary: return binary(n->binary_op(), c.at(0), c.at(1));
    case NodeKind::Compare: return compare(n->compare_op(), c.at(0), n->scalar());
    case NodeKind::Gather: return gather(c.at(0), c.at(1));
    case NodeKind::Subst: return subst(c.at(0), c.at(1), n->scalar());
    case NodeKind::MatMul: return matmul(c.at(0), c.at(1));
    default: return n;
  }
}

std::vector<NodePtr> topological_order(const NodePtr& root) {
  std::vector<NodePtr> out;
  std::unordered_set<NodeId> seen;
  // Iterative post-order; deep elementwise chains are common in scripts.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  if (root) stack.emplace_back(root, 0);
  seen.insert(root ? root->id() : 0);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->children().size()) {
      const NodePtr& c = node->children()[next++];
      if (seen.insert(c->id()).second) stack.emplace_back(c, 0);
    } else {
      out.push_back(node);
      stack.pop_back();
    }
  }
  return out;
}

std::unordered_map<NodeId, int> consumer_counts(const NodePtr& root) {
  std::unordered_map<NodeId, int> counts;
  for (const auto& n : topological_order(root)) {
    counts.try_emplace(n->id(), 0);
    std::unordered_set<NodeId> distinct;
    for (const auto& c : n->children())
      if (distinct.insert(c->id()).second) ++counts[c->id()];
  }
  return counts;
}

std::size_t count_operations(const NodePtr& root) {
  std::size_t n = 0;
  for (const auto& node : topological_order(root)) {
    if (node->is_elementwise() || node->kind() == NodeKind::Gather ||
        node->kind() == NodeKind::MatMul)
      ++n;
  }
  return n;
}

std::size_t count_intermediates(const NodePtr& root) {
  std::size_t ops = count_operations(root);
  bool root_is_op = root->is_elementwise() || root->kind() == NodeKind::Gather ||
                    root->kind() == NodeKind::MatMul;
  return root_is_op ? ops - 1 : ops;
}

std::string dump_dag(const NodePtr& root) {
  std::ostringstream os;
  for (const auto& n : topological_order(root)) {
    os << 'n' << n->id() << ' ' << to_string(n->kind());
    switch (n->kind()) {
      case NodeKind::Leaf: os << '[' << n->name() << ']'; break;
      case NodeKind::ScalarConst: os << '[' << n->scalar() << ']'; break;
      case NodeKind::ElemUnary: os << '[' << to_string(n->unary_op()) << ']'; break;
      case NodeKind::ElemBinary: os << '[' << to_string(n->binary_op()) << ']'; break;
      case NodeKind::Compare: os << '[' << to_string(n->compare_op()) << ' ' << n->scalar() << ']'; break;
      case NodeKind::Range: os << '[' << n->range_lo() << ':' << n->range_hi() << ']'; break;
      case NodeKind::Subst: os << '[' << n->scalar() << ']'; break;
      case NodeKind::Sample:
        os << '[' << n->sample_population() << ',' << n->sample_count() << ",seed=" << n->sample_seed() << ']';
        break;
      default: break;
    }
    os << " (";
    for (std::size_t i = 0; i < n->children().size(); ++i)
      os << (i ? "," : "") << 'n' << n->children()[i]->id();
    os << ") " << n->shape().rows << 'x' << n->shape().cols << '\n';
  }
  return os.str();
}

void Environment::assign(const std::string& name, NodePtr node) {
  Binding b;
  for (const auto& n : topological_order(node)) b.deps.insert(n->id());
  b.node = std::move(node);
  bindings_[name] = std::move(b);
}

const NodePtr& Environment::lookup(const std::string& name) const {
  auto it = bindings_.find(name);
  if (it == bindings_.end()) throw ShapeError("unknown name '" + name + "'");
  return it->second.node;
}

const std::set<NodeId>& Environment::dependencies(const std::string& name) const {
  auto it = bindings_.find(name);
  if (it == bindings_.end()) throw ShapeError("unknown name '" + name + "'");
  return it->second.deps;
}

std::set<std::string> Environment::leaf_inputs(const std::string& name) const {
  std::set<std::string> out;
  for (const auto& n : topological_order(lookup(name)))
    if (n->kind() == NodeKind::Leaf) out.insert(n->name());
  return out;
}

std::vector<Index> sample_indices(Index n, Index k, std::uint64_t seed) {
  if (k < 0 || k > n) throw ShapeError("sample size out of range");
  SplitMix64 rng{seed};
  std::unordered_map<Index, Index> moved;  // virtual array slot -> value, when displaced
  auto value_at = [&](Index i) {
    auto it = moved.find(i);
    return it == moved.end() ? i : it->second;
  };
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i) {
    const auto span = static_cast<unsigned __int128>(n - i);
    const Index j = i + static_cast<Index>((static_cast<unsigned __int128>(rng()) * span) >> 64);
    const Index vi = value_at(i), vj = value_at(j);
    moved[j] = vi;
    moved[i] = vj;
    out.push_back(vj + 1);
  }
  return out;
}

double uniform_at(std::uint64_t seed, Index row, Index col) {
  SplitMix64 rng{seed ^ (static_cast<std::uint64_t>(row) * 0xD1B54A32D192ED03ull) ^
                 (static_cast<std::uint64_t>(col) * 0x8CB92BA72F3D8DD7ull)};
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace riot
