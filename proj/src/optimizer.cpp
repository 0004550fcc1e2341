#include <riot/optimizer.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace riot {

// ---------------------------------------------------------------------------
// Rewrites

namespace {

bool is_const(const NodePtr& n) { return n->kind() == NodeKind::ScalarConst; }

std::vector<RewriteRule> make_rules() {
  std::vector<RewriteRule> rules;
  rules.push_back({"gather-through-unary",
                   [](const NodePtr& x, const NodePtr& idx, const RewriteRule::Push& push) -> NodePtr {
                     if (x->kind() != NodeKind::ElemUnary) return nullptr;
                     return unary(x->unary_op(), push(x->child(0), idx));
                   }});
  rules.push_back({"gather-through-binary",
                   [](const NodePtr& x, const NodePtr& idx, const RewriteRule::Push& push) -> NodePtr {
                     if (x->kind() != NodeKind::ElemBinary) return nullptr;
                     const NodePtr& l = x->child(0);
                     const NodePtr& r = x->child(1);
                     if (is_const(l) && is_const(r)) return nullptr;
                     return binary(x->binary_op(), is_const(l) ? l : push(l, idx),
                                   is_const(r) ? r : push(r, idx));
                   }});
  rules.push_back({"gather-through-compare",
                   [](const NodePtr& x, const NodePtr& idx, const RewriteRule::Push& push) -> NodePtr {
                     if (x->kind() != NodeKind::Compare) return nullptr;
                     return compare(x->compare_op(), push(x->child(0), idx), x->scalar());
                   }});
  rules.push_back({"gather-through-subst",
                   [](const NodePtr& x, const NodePtr& idx, const RewriteRule::Push& push) -> NodePtr {
                     if (x->kind() != NodeKind::Subst) return nullptr;
                     return subst(push(x->child(0), idx), push(x->child(1), idx), x->scalar());
                   }});
  rules.push_back({"gather-of-gather",
                   [](const NodePtr& x, const NodePtr& idx, const RewriteRule::Push& push) -> NodePtr {
                     if (x->kind() != NodeKind::Gather) return nullptr;
                     return push(x->child(0), push(x->child(1), idx));
                   }});
  return rules;
}

}  // namespace

const std::vector<RewriteRule>& gather_rules() {
  static const std::vector<RewriteRule> rules = make_rules();
  return rules;
}

int RewriteStats::total() const {
  int t = 0;
  for (const auto& [name, n] : fired) t += n;
  return t;
}

NodePtr push_gather(const NodePtr& root, RewriteStats* stats) {
  if (!root) return root;
  std::map<std::pair<NodeId, NodeId>, NodePtr> pushed;
  std::map<std::string, int> fired;
  // Gathers no rule can move are kept as the original node.
  std::map<std::pair<NodeId, NodeId>, NodePtr> originals;
  for (const auto& n : topological_order(root))
    if (n->kind() == NodeKind::Gather) originals.emplace(std::make_pair(n->child(0)->id(), n->child(1)->id()), n);

  RewriteRule::Push push = [&](const NodePtr& x, const NodePtr& idx) -> NodePtr {
    const auto key = std::make_pair(x->id(), idx->id());
    if (auto it = pushed.find(key); it != pushed.end()) return it->second;
    NodePtr out;
    for (const auto& rule : gather_rules()) {
      if ((out = rule.apply(x, idx, push))) {
        ++fired[rule.name];
        break;
      }
    }
    if (!out) {
      const auto it = originals.find(key);
      out = it != originals.end() ? it->second : gather(x, idx);
    }
    pushed.emplace(key, out);
    return out;
  };

  std::unordered_map<NodeId, NodePtr> rewritten;
  for (const auto& n : topological_order(root)) {
    std::vector<NodePtr> kids;
    bool changed = false;
    for (const auto& c : n->children()) {
      kids.push_back(rewritten.at(c->id()));
      changed |= kids.back() != c;
    }
    NodePtr out;
    if (n->kind() == NodeKind::Gather)
      out = push(kids[0], kids[1]);
    else
      out = changed ? with_children(n, std::move(kids)) : n;
    rewritten.emplace(n->id(), out);
  }

  if (stats) {
    stats->fired.assign(fired.begin(), fired.end());
  }
  return rewritten.at(root->id());
}

// ---------------------------------------------------------------------------
// Planning

const char* to_string(PhysKind k) {
  switch (k) {
    case PhysKind::Scan: return "Scan";
    case PhysKind::Pipeline: return "Pipeline";
    case PhysKind::GatherExec: return "GatherExec";
    case PhysKind::BlockedMatMul: return "BlockedMatMul";
    case PhysKind::Materialize: return "Materialize";
    case PhysKind::SampleExec: return "SampleExec";
  }
  return "?";
}

int PhysNode::arithmetic_steps() const {
  return static_cast<int>(
      std::count_if(program.begin(), program.end(), [](const PipelineStep& s) { return s.is_arithmetic(); }));
}

Index matmul_submatrix_side(const ResourceBudget& budget) {
  budget.validate();
  const Index t = square_tile_side(budget.block_scalars);
  auto q = static_cast<Index>(std::sqrt(static_cast<double>(budget.frames() / 3)));
  while ((q + 1) * (q + 1) * 3 <= budget.frames()) ++q;
  while (q > 1 && q * q * 3 > budget.frames()) --q;
  return q * t;
}

namespace {

bool stored_kind(const NodePtr& n) {
  return n->kind() == NodeKind::Leaf || n->kind() == NodeKind::Sample || n->kind() == NodeKind::MatMul;
}

bool virtual_kind(const NodePtr& n) {
  return n->kind() == NodeKind::ScalarConst || n->kind() == NodeKind::Range;
}

std::string node_name(const NodePtr& n) {
  if (n->kind() == NodeKind::Leaf) return n->name();
  return "n" + std::to_string(n->id());
}

std::string tiles_label(const TileSpec& t) {
  std::ostringstream os;
  os << to_string(t.kind) << ' ' << t.tile_rows << 'x' << t.tile_cols;
  return os.str();
}

class Planner {
 public:
  Planner(const ResourceBudget& budget, PlanOptions options, PhysicalPlan& out)
      : budget_(budget), options_(options), out_(out) {}

  PhysPtr build(const NodePtr& root) {
    analyze(root);
    if (stored_kind(root)) return stored(root);
    return pipeline(root, std::nullopt);
  }

 private:
  // Decides which pipeline-kind nodes become materialization points.
  void analyze(const NodePtr& root) {
    const auto order = topological_order(root);
    consumers_ = consumer_counts(root);

    for (const auto& n : order) {
      if (n->kind() == NodeKind::Gather) {
        const NodePtr& data = n->child(0);
        if (data->is_elementwise() || data->kind() == NodeKind::Gather) materialize_.insert(data->id());
      } else if (n->kind() == NodeKind::MatMul) {
        for (const auto& c : n->children())
          if (!stored_kind(c)) materialize_.insert(c->id());
      }
    }

    // Each pipeline-kind node collects the fused regions that would inline it.
    // More than one region means it would be computed twice: store it instead.
    std::unordered_map<NodeId, std::set<NodeId>> regions;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const NodePtr& n = *it;
      if (stored_kind(n) || virtual_kind(n)) continue;
      auto& mine = regions[n->id()];
      if (n == root || materialize_.count(n->id()) || mine.size() > 1) {
        if (n != root) materialize_.insert(n->id());
        mine = {n->id()};
      }
      std::vector<NodePtr> inlined;
      if (n->is_elementwise())
        inlined = n->children();
      else if (n->kind() == NodeKind::Gather)
        inlined = {n->child(1)};
      for (const auto& c : inlined) {
        if (stored_kind(c) || virtual_kind(c)) continue;
        regions[c->id()].insert(mine.begin(), mine.end());
      }
    }
    root_ = root;
  }

  PhysPtr make(PhysKind kind, const NodePtr& expr, Shape shape) {
    auto p = std::make_shared<PhysNode>();
    p->kind = kind;
    p->expr = expr;
    p->shape = shape;
    return p;
  }

  PhysPtr stored(const NodePtr& n) {
    if (auto it = stored_.find(n->id()); it != stored_.end()) return it->second;
    PhysPtr p;
    switch (n->kind()) {
      case NodeKind::Leaf:
        p = make(PhysKind::Scan, n, n->shape());
        p->matrix = n->matrix();
        p->tiles = n->matrix()->tiles();
        p->label = "Scan " + n->name();
        break;
      case NodeKind::Sample:
        p = make(PhysKind::SampleExec, n, n->shape());
        p->tiles = TileSpec::col_strips(budget_.block_scalars);
        p->label = "SampleExec " + node_name(n) + " [" + std::to_string(n->sample_count()) + " of " +
                   std::to_string(n->sample_population()) + "]";
        break;
      case NodeKind::MatMul:
        p = chain(n);
        break;
      default: {
        const TileSpec t = TileSpec::default_for(n->shape(), budget_.block_scalars);
        p = materialize(pipeline(n, t), t, n);
      }
    }
    stored_.emplace(n->id(), p);
    return p;
  }

  // Stored result in the square tiling BlockedMatMul needs.
  PhysPtr stored_square(const NodePtr& n) {
    const TileSpec sq = TileSpec::square(budget_.block_scalars);
    if (auto it = square_.find(n->id()); it != square_.end()) return it->second;
    PhysPtr p;
    if (!stored_kind(n) && !stored_.count(n->id())) {
      p = materialize(pipeline(n, sq), sq, n);
      stored_.emplace(n->id(), p);
    } else {
      PhysPtr base = stored(n);
      if (base->tiles == sq) {
        p = base;
      } else {
        auto copy = make(PhysKind::Pipeline, n, n->shape());
        copy->tiles = sq;
        copy->inputs = {base};
        PipelineStep in;
        in.op = PipelineStep::Op::Input;
        in.input = 0;
        copy->program = {in};
        copy->output_slot = 0;
        copy->label = "Pipeline copy of " + node_name(n);
        p = materialize(copy, sq, n);
        p->conversion = true;
      }
    }
    square_.emplace(n->id(), p);
    return p;
  }

  PhysPtr materialize(const PhysPtr& child, const TileSpec& tiles, const NodePtr& expr) {
    auto p = make(PhysKind::Materialize, expr, child->shape);
    p->inputs = {child};
    p->tiles = tiles;
    p->label = "Materialize " + (expr ? node_name(expr) : std::string("intermediate"));
    return p;
  }

  PhysPtr chain(const NodePtr& top) {
    std::vector<NodePtr> operands;
    std::map<std::pair<int, int>, int> written_split;
    std::function<void(const NodePtr&, bool)> flatten = [&](const NodePtr& v, bool is_top) {
      const bool expand = v->kind() == NodeKind::MatMul &&
                          (is_top || (consumers_[v->id()] == 1 && v != root_));
      if (!expand) {
        operands.push_back(v);
        return;
      }
      const int first = static_cast<int>(operands.size());
      flatten(v->child(0), false);
      const int split = static_cast<int>(operands.size()) - 1;
      flatten(v->child(1), false);
      written_split[{first, static_cast<int>(operands.size()) - 1}] = split;
    };
    flatten(top, true);

    std::vector<Index> dims;
    dims.push_back(operands.front()->shape().rows);
    for (const auto& o : operands) dims.push_back(o->shape().cols);
    ChainPlan<Index> order = options_.optimize
                                 ? order_chain<Index>(dims)
                                 : ChainPlan<Index>::from_splits(dims, [&](int i, int j) {
                                     return written_split.at({i, j});
                                   });

    std::vector<std::string> names;
    for (const auto& o : operands) names.push_back(node_name(o));
    out_.chain_orders.push_back(order.parenthesization(names));

    std::vector<PhysPtr> inputs;
    for (const auto& o : operands) inputs.push_back(stored_square(o));

    const TileSpec sq = TileSpec::square(budget_.block_scalars);
    const Index p = matmul_submatrix_side(budget_);
    std::function<PhysPtr(int)> emit = [&](int s) -> PhysPtr {
      const auto& st = order.steps[static_cast<std::size_t>(s)];
      if (st.left < 0) return inputs[static_cast<std::size_t>(st.first)];
      PhysPtr l = emit(st.left), r = emit(st.right);
      const bool is_root = s == order.root;
      auto mm = make(PhysKind::BlockedMatMul, is_root ? top : nullptr, {l->shape.rows, r->shape.cols});
      mm->inputs = {l, r};
      mm->tiles = sq;
      mm->p = p;
      std::ostringstream os;
      os << "BlockedMatMul p=" << p << " (" << to_string(l->shape) << " x " << to_string(r->shape) << ")";
      mm->label = os.str();
      if (is_root) return mm;
      auto m = materialize(mm, sq, nullptr);
      m->temporary = true;
      m->label = "Materialize intermediate " + to_string(mm->shape) + " temporary";
      return m;
    };
    return emit(order.root);
  }

  // Fused per-element program for `root`. `tiles` fixes the iteration tiling;
  // otherwise it follows the first same-shaped stored input.
  PhysPtr pipeline(const NodePtr& root, std::optional<TileSpec> tiles) {
    auto p = make(PhysKind::Pipeline, root, root->shape());
    std::unordered_map<NodeId, int> slots;
    std::unordered_map<const PhysNode*, int> input_of;

    auto add_input = [&](const PhysPtr& in) {
      auto [it, fresh] = input_of.emplace(in.get(), static_cast<int>(p->inputs.size()));
      if (fresh) p->inputs.push_back(in);
      return it->second;
    };
    auto emit = [&](PipelineStep s) {
      p->program.push_back(s);
      return static_cast<int>(p->program.size()) - 1;
    };

    std::function<int(const NodePtr&)> compile = [&](const NodePtr& v) -> int {
      if (auto it = slots.find(v->id()); it != slots.end()) return it->second;
      PipelineStep s;
      if (v != root && (stored_kind(v) || materialize_.count(v->id()))) {
        s.op = PipelineStep::Op::Input;
        s.input = add_input(stored(v));
      } else {
        switch (v->kind()) {
          case NodeKind::ScalarConst:
            s.op = PipelineStep::Op::Const;
            s.value = v->scalar();
            break;
          case NodeKind::Range:
            s.op = PipelineStep::Op::RangeValue;
            s.lo = v->range_lo();
            s.step = v->range_hi() >= v->range_lo() ? 1 : -1;
            break;
          case NodeKind::ElemUnary:
            s.op = PipelineStep::Op::Unary;
            s.unary = v->unary_op();
            s.a = compile(v->child(0));
            break;
          case NodeKind::ElemBinary:
            s.op = PipelineStep::Op::Binary;
            s.binary = v->binary_op();
            s.a = compile(v->child(0));
            s.b = compile(v->child(1));
            break;
          case NodeKind::Compare:
            s.op = PipelineStep::Op::Compare;
            s.compare = v->compare_op();
            s.value = v->scalar();
            s.a = compile(v->child(0));
            break;
          case NodeKind::Subst:
            s.op = PipelineStep::Op::Subst;
            s.value = v->scalar();
            s.a = compile(v->child(0));
            s.b = compile(v->child(1));
            break;
          case NodeKind::Gather:
            s.op = PipelineStep::Op::Gather;
            s.input = add_input(gather_exec(v));
            s.a = compile(v->child(1));
            break;
          default:
            s.op = PipelineStep::Op::Input;
            s.input = add_input(stored(v));
        }
      }
      const int slot = emit(s);
      slots.emplace(v->id(), slot);
      return slot;
    };
    p->output_slot = compile(root);

    if (tiles) {
      p->tiles = *tiles;
    } else {
      p->tiles = TileSpec::default_for(root->shape(), budget_.block_scalars);
      for (const auto& in : p->inputs) {
        if (in->produces_stored() && in->shape == root->shape()) {
          p->tiles = in->tiles;
          break;
        }
      }
    }
    std::ostringstream os;
    os << "Pipeline " << node_name(root) << " [" << p->arithmetic_steps() << " ops, " << p->inputs.size()
       << " inputs, " << tiles_label(p->tiles) << "]";
    p->label = os.str();
    return p;
  }

  PhysPtr gather_exec(const NodePtr& g) {
    const NodePtr& src = g->child(0);
    auto p = make(PhysKind::GatherExec, g, g->shape());
    p->source_size = src->shape().size();
    if (src->kind() == NodeKind::Range) {
      p->gather_source = PhysNode::GatherSource::Range;
      p->source_lo = src->range_lo();
      p->source_step = src->range_hi() >= src->range_lo() ? 1 : -1;
      p->label = "GatherExec from range " + std::to_string(src->range_lo()) + ":" +
                 std::to_string(src->range_hi());
    } else if (src->kind() == NodeKind::ScalarConst) {
      p->gather_source = PhysNode::GatherSource::Const;
      p->source_value = src->scalar();
      p->label = "GatherExec from constant";
    } else {
      p->gather_source = PhysNode::GatherSource::Stored;
      p->inputs = {stored(src)};
      p->label = "GatherExec from " + node_name(src);
    }
    return p;
  }

  ResourceBudget budget_;
  PlanOptions options_;
  PhysicalPlan& out_;
  NodePtr root_;
  std::unordered_map<NodeId, int> consumers_;
  std::unordered_set<NodeId> materialize_;
  std::unordered_map<NodeId, PhysPtr> stored_;
  std::unordered_map<NodeId, PhysPtr> square_;
};

std::uint64_t tiles_of(const Shape& s, const TileSpec& t, Index block_scalars) {
  if (s.rows == 0 || s.cols == 0) return 0;
  const Index bpt = ceil_div(t.area(), block_scalars);
  return static_cast<std::uint64_t>(ceil_div(s.rows, t.tile_rows) * ceil_div(s.cols, t.tile_cols) * bpt);
}

}  // namespace

PhysicalPlan plan(const NodePtr& root, const ResourceBudget& budget, PlanOptions options) {
  try {
    budget.validate();
  } catch (const BudgetError& e) {
    throw BudgetError(std::string("budget too small: ") + e.what());
  }
  PhysicalPlan out;
  out.logical = root;
  out.budget = budget;
  out.p = matmul_submatrix_side(budget);
  out.optimized = options.optimize ? push_gather(root, &out.rewrites) : root;
  if (!root) return out;
  Planner planner(budget, options, out);
  out.root = planner.build(out.optimized);

  const IoEstimate est = estimate_io(out);
  for (const auto& [node, blocks] : est.per_node) const_cast<PhysNode*>(node)->estimated_blocks = blocks;
  return out;
}

std::uint64_t blocked_matmul_blocks(Index m, Index l, Index n, const ResourceBudget& budget) {
  if (m == 0 || l == 0 || n == 0) return 0;
  const Index t = square_tile_side(budget.block_scalars);
  const Index q = matmul_submatrix_side(budget) / t;
  const Index gm = ceil_div(m, t), gl = ceil_div(l, t), gn = ceil_div(n, t);
  const Index ni = ceil_div(gm, q), nj = ceil_div(gn, q);
  // Per (I, J): every A tile of the row band and every B tile of the column
  // band once, then the T tiles once.
  return static_cast<std::uint64_t>(nj * gm * gl + ni * gl * gn + gm * gn);
}

IoEstimate estimate_io(const PhysicalPlan& plan) {
  IoEstimate est;
  if (!plan.root) return est;
  const Index B = plan.budget.block_scalars;
  std::unordered_set<const PhysNode*> seen;
  std::function<void(const PhysNode*)> visit = [&](const PhysNode* n) {
    if (!seen.insert(n).second) return;
    for (const auto& in : n->inputs) visit(in.get());
    std::uint64_t blocks = 0;
    switch (n->kind) {
      case PhysKind::Scan: break;
      case PhysKind::SampleExec: blocks = tiles_of(n->shape, n->tiles, B); break;
      case PhysKind::Pipeline:
        for (const auto& in : n->inputs)
          if (in->produces_stored()) blocks += tiles_of(in->shape, in->tiles, B);
        break;
      case PhysKind::GatherExec:
        if (n->gather_source == PhysNode::GatherSource::Stored) {
          const auto& src = n->inputs[0];
          blocks = std::min<std::uint64_t>(static_cast<std::uint64_t>(n->shape.size()),
                                           tiles_of(src->shape, src->tiles, B));
        }
        break;
      case PhysKind::Materialize:
        if (n->inputs[0]->kind == PhysKind::Pipeline) blocks = tiles_of(n->shape, n->tiles, B);
        break;
      case PhysKind::BlockedMatMul:
        blocks = blocked_matmul_blocks(n->inputs[0]->shape.rows, n->inputs[0]->shape.cols,
                                       n->inputs[1]->shape.cols, plan.budget);
        break;
    }
    est.per_node.emplace_back(n, blocks);
    est.total += blocks;
  };
  visit(plan.root.get());
  return est;
}

std::string render_plan(const PhysicalPlan& plan) {
  std::ostringstream os;
  if (!plan.root) return "(empty plan)\n";
  std::unordered_map<const PhysNode*, int> ids;
  std::function<void(const PhysNode*, int)> go = [&](const PhysNode* n, int depth) {
    os << std::string(static_cast<std::size_t>(depth) * 2, ' ');
    auto [it, fresh] = ids.emplace(n, static_cast<int>(ids.size()) + 1);
    os << '#' << it->second << ' ' << n->label;
    if (!fresh) {
      os << " (shared, see above)\n";
      return;
    }
    os << "  shape=" << to_string(n->shape) << " est_blocks=" << n->estimated_blocks;
    if (n->conversion) os << " conversion";
    os << '\n';
    for (const auto& in : n->inputs) go(in.get(), depth + 1);
  };
  go(plan.root.get(), 0);
  const IoEstimate est = estimate_io(plan);
  os << "estimated blocks: " << est.total << '\n';
  for (const auto& c : plan.chain_orders) os << "chain order: " << c << '\n';
  if (plan.rewrites.total() > 0) {
    os << "rewrites:";
    for (const auto& [name, n] : plan.rewrites.fired) os << ' ' << name << "=" << n;
    os << '\n';
  }
  return os.str();
}

}  // namespace riot
