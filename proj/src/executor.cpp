#include <riot/executor.hpp>

#include <cmath>
#include <functional>
#include <optional>
#include <sstream>

namespace riot {

MatmulSchedule make_schedule(const ResourceBudget& budget) {
  MatmulSchedule s;
  s.tile = square_tile_side(budget.block_scalars);
  s.p = matmul_submatrix_side(budget);
  s.q = s.p / s.tile;
  return s;
}

namespace {

void require_square(const StoredMatrix& m, Index tile, const char* what) {
  const TileSpec& t = m.tiles();
  if (t.kind != LayoutKind::Square || t.tile_rows != tile || t.tile_cols != tile) {
    throw ShapeError(std::string("blocked matmul needs square ") + std::to_string(tile) + "x" +
                     std::to_string(tile) + " tiles for " + what);
  }
}

// T += A * B over the in-bounds extents, scalar order i-k-j.
void tile_multiply_add(const PinnedTile& a, const PinnedTile& b, PinnedTile& t) {
  const Shape ea = a.extent(), eb = b.extent();
  for (Index i = 0; i < ea.rows; ++i) {
    for (Index k = 0; k < ea.cols; ++k) {
      const double aik = a.at(i, k);
      for (Index j = 0; j < eb.cols; ++j) t.at(i, j) += aik * b.at(k, j);
    }
  }
}

}  // namespace

void exec_matmul_blocked(const StoredMatrix& A, const StoredMatrix& B, const StoredMatrix& out,
                         const MatmulSchedule& sched, BufferPool& pool) {
  if (A.shape().cols != B.shape().rows || out.shape() != Shape{A.shape().rows, B.shape().cols}) {
    throw ShapeError("blocked matmul dimension mismatch: " + to_string(A.shape()) + " x " +
                     to_string(B.shape()) + " -> " + to_string(out.shape()));
  }
  require_square(A, sched.tile, "the left operand");
  require_square(B, sched.tile, "the right operand");
  require_square(out, sched.tile, "the result");
  if (3 * sched.q * sched.q > pool.budget().frames()) {
    throw BudgetError("matmul schedule needs " + std::to_string(3 * sched.q * sched.q) +
                      " frames, pool has " + std::to_string(pool.budget().frames()));
  }

  const Index q = sched.q;
  const Index gm = out.grid().rows(), gn = out.grid().cols(), gl = A.grid().cols();
  const Index l = A.shape().cols;
  std::uint64_t products = 0;

  for (Index I = 0; I < gm; I += q) {
    const Index ie = std::min(gm, I + q);
    for (Index J = 0; J < gn; J += q) {
      const Index je = std::min(gn, J + q);
      std::vector<PinnedTile> T;
      for (Index ti = I; ti < ie; ++ti) {
        for (Index tj = J; tj < je; ++tj) {
          T.emplace_back(out, ti, tj, pool, AccessMode::Write);
          PinnedTile& t = T.back();
          for (Index r = 0; r < sched.tile; ++r)
            for (Index c = 0; c < sched.tile; ++c) t.at(r, c) = 0.0;
        }
      }
      for (Index K = 0; K < gl; K += q) {
        const Index ke = std::min(gl, K + q);
        std::vector<PinnedTile> As, Bs;
        for (Index ti = I; ti < ie; ++ti)
          for (Index tk = K; tk < ke; ++tk) As.emplace_back(A, ti, tk, pool, AccessMode::Read);
        for (Index tk = K; tk < ke; ++tk)
          for (Index tj = J; tj < je; ++tj) Bs.emplace_back(B, tk, tj, pool, AccessMode::Read);
        const Index kw = ke - K, jw = je - J;
        for (Index ti = I; ti < ie; ++ti) {
          for (Index tj = J; tj < je; ++tj) {
            PinnedTile& t = T[static_cast<std::size_t>((ti - I) * jw + (tj - J))];
            for (Index tk = K; tk < ke; ++tk) {
              tile_multiply_add(As[static_cast<std::size_t>((ti - I) * kw + (tk - K))],
                                Bs[static_cast<std::size_t>((tk - K) * jw + (tj - J))], t);
            }
          }
        }
        As.clear();
        Bs.clear();
      }
      for (const auto& t : T) products += static_cast<std::uint64_t>(t.extent().size());
    }
  }
  pool.add_elements_computed(products * static_cast<std::uint64_t>(l));
}

MatrixPtr exec_chain(const ChainPlan<Index>& plan, const std::vector<MatrixPtr>& operands,
                     BufferPool& pool, const std::filesystem::path& temp_dir) {
  if (static_cast<int>(operands.size()) != plan.size()) {
    throw ShapeError("chain plan covers " + std::to_string(plan.size()) + " matrices, got " +
                     std::to_string(operands.size()));
  }
  if (plan.size() == 0) throw ShapeError("empty matrix chain");
  const MatmulSchedule sched = make_schedule(pool.budget());
  const TileSpec sq = TileSpec::square(pool.budget().block_scalars);
  std::filesystem::create_directories(temp_dir);
  static std::uint64_t counter = 0;

  std::function<MatrixPtr(int)> run = [&](int s) -> MatrixPtr {
    const auto& st = plan.steps[static_cast<std::size_t>(s)];
    if (st.left < 0) return operands[static_cast<std::size_t>(st.first)];
    MatrixPtr l = run(st.left);
    MatrixPtr r = run(st.right);
    auto path = temp_dir / ("chain-" + std::to_string(counter++) + ".riot");
    auto out = StoredMatrix::create(path, {l->shape().rows, r->shape().cols}, sq, Linearization::TileRowMajor,
                                    pool.budget().block_scalars);
    out->remove_on_close(true);
    exec_matmul_blocked(*l, *r, *out, sched, pool);
    if (!plan.is_leaf(st.left)) pool.discard(*l->file());
    if (!plan.is_leaf(st.right)) pool.discard(*r->file());
    return out;
  };
  return run(plan.root);
}

// ---------------------------------------------------------------------------
// Session

struct Session::Ctx {
  std::unordered_map<const PhysNode*, MatrixPtr> produced;
};

Session::Session(ResourceBudget budget, std::filesystem::path temp_dir, PlanOptions options)
    : budget_(budget), temp_dir_(std::move(temp_dir)), options_(options), pool_(budget) {
  budget_.validate();
  std::filesystem::create_directories(temp_dir_);
}

Session::~Session() {
  try {
    for (auto& [id, m] : cache_)
      if (m) pool_.discard(*m->file());
  } catch (...) {
  }
}

std::filesystem::path Session::temp_path() {
  return temp_dir_ / ("tmp-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + "-" +
                      std::to_string(temp_counter_++) + ".riot");
}

PhysicalPlan Session::prepare(const NodePtr& root) const { return plan(root, budget_, options_); }

RunReport Session::report() const {
  RunReport r;
  r.io = pool_.stats();
  r.peak_pinned_blocks = std::max(peak_pinned_, pool_.peak_pinned_frames());
  r.pipeline_pin_violations = pin_violations_;
  return r;
}

void Session::reset_counters() {
  pool_.reset_counters();
  peak_pinned_ = 0;
  pin_violations_ = 0;
}

Eigen::MatrixXd Session::execute(const PhysicalPlan& plan) {
  if (!plan.root) return {};
  Ctx ctx;
  const PhysNode& root = *plan.root;
  if (root.kind == PhysKind::Pipeline) {
    Eigen::MatrixXd out(root.shape.rows, root.shape.cols);
    run_pipeline(root, ctx, nullptr, &out);
    return out;
  }
  MatrixPtr m = produce(plan.root, ctx);
  return export_matrix(*m, pool_);
}

MatrixPtr Session::materialize(const NodePtr& root, const std::filesystem::path& path, TileSpec tiles,
                               Linearization lin) {
  PhysicalPlan p = prepare(root);
  Ctx ctx;
  auto target = StoredMatrix::create(path, root->shape(), tiles, lin, budget_.block_scalars);
  if (p.root->kind == PhysKind::Pipeline) {
    run_pipeline(*p.root, ctx, target.get(), nullptr);
  } else {
    // Copy the stored result tile by tile into the requested layout.
    MatrixPtr src = produce(p.root, ctx);
    PhysNode copy;
    copy.kind = PhysKind::Pipeline;
    copy.shape = root->shape();
    copy.tiles = tiles;
    auto scan = std::make_shared<PhysNode>();
    scan->kind = PhysKind::Scan;
    scan->shape = src->shape();
    scan->tiles = src->tiles();
    scan->matrix = src;
    copy.inputs = {scan};
    PipelineStep in;
    in.op = PipelineStep::Op::Input;
    in.input = 0;
    copy.program = {in};
    copy.output_slot = 0;
    run_pipeline(copy, ctx, target.get(), nullptr);
  }
  pool_.flush(*target->file());
  return target;
}

MatrixPtr Session::produce(const PhysPtr& node, Ctx& ctx) {
  if (auto it = ctx.produced.find(node.get()); it != ctx.produced.end()) return it->second;
  const bool cacheable = node->expr && !node->temporary && node->kind != PhysKind::Scan;
  if (cacheable) {
    if (auto it = cache_.find(node->expr->id()); it != cache_.end() && it->second->tiles() == node->tiles) {
      ctx.produced.emplace(node.get(), it->second);
      return it->second;
    }
  }

  MatrixPtr out;
  switch (node->kind) {
    case PhysKind::Scan:
      out = node->matrix;
      break;
    case PhysKind::SampleExec: {
      const auto& e = *node->expr;
      const auto idx = sample_indices(e.sample_population(), e.sample_count(), e.sample_seed());
      out = StoredMatrix::create(temp_path(), node->shape, node->tiles, Linearization::TileRowMajor,
                                 budget_.block_scalars);
      out->remove_on_close(true);
      const TileGrid& g = out->grid();
      for (Index ti = 0; ti < g.rows(); ++ti) {
        PinnedTile t(*out, ti, 0, pool_, AccessMode::Write);
        for (Index r = 0; r < t.extent().rows; ++r)
          t.at(r, 0) = static_cast<double>(idx[static_cast<std::size_t>(ti * node->tiles.tile_rows + r)]);
      }
      break;
    }
    case PhysKind::Materialize: {
      const PhysPtr& child = node->inputs[0];
      if (child->kind == PhysKind::BlockedMatMul) {
        out = produce(child, ctx);
      } else {
        out = StoredMatrix::create(temp_path(), node->shape, node->tiles, Linearization::TileRowMajor,
                                   budget_.block_scalars);
        out->remove_on_close(true);
        run_pipeline(*child, ctx, out.get(), nullptr);
      }
      break;
    }
    case PhysKind::BlockedMatMul: {
      MatrixPtr l = produce(node->inputs[0], ctx);
      MatrixPtr r = produce(node->inputs[1], ctx);
      out = StoredMatrix::create(temp_path(), node->shape, node->tiles, Linearization::TileRowMajor,
                                 budget_.block_scalars);
      out->remove_on_close(true);
      exec_matmul_blocked(*l, *r, *out, make_schedule(budget_), pool_);
      for (const auto& in : node->inputs) {
        if (in->kind == PhysKind::Materialize && in->temporary) {
          pool_.discard(*ctx.produced.at(in.get())->file());
          ctx.produced.erase(in.get());
        }
      }
      break;
    }
    case PhysKind::Pipeline:
    case PhysKind::GatherExec:
      throw Error(std::string("internal: ") + to_string(node->kind) + " does not produce a stored matrix");
  }
  ctx.produced.emplace(node.get(), out);
  if (cacheable) cache_[node->expr->id()] = out;
  return out;
}

namespace {

double apply_unary(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::Sqrt: return std::sqrt(x);
    case UnaryOp::Square: return x * x;
    case UnaryOp::Negate: return -x;
  }
  return x;
}

double apply_binary(BinaryOp op, double a, double b) {
  switch (op) {
    case BinaryOp::Add: return a + b;
    case BinaryOp::Sub: return a - b;
    case BinaryOp::Mul: return a * b;
    case BinaryOp::Div: return a / b;
    case BinaryOp::Pow: return std::pow(a, b);
  }
  return a;
}

double apply_compare(CompareOp op, double a, double t) {
  switch (op) {
    case CompareOp::Gt: return a > t ? 1.0 : 0.0;
    case CompareOp::Ge: return a >= t ? 1.0 : 0.0;
    case CompareOp::Lt: return a < t ? 1.0 : 0.0;
    case CompareOp::Le: return a <= t ? 1.0 : 0.0;
    case CompareOp::Eq: return a == t ? 1.0 : 0.0;
  }
  return 0.0;
}

Index checked_position(double v, Index bound) {
  if (!(v >= 1.0) || v > static_cast<double>(bound) || v != std::floor(v)) {
    std::ostringstream os;
    os.precision(17);
    os << "index " << v << " out of range 1.." << bound;
    throw IndexError(os.str());
  }
  return static_cast<Index>(v) - 1;
}

struct ResolvedInput {
  const PhysNode* node = nullptr;
  MatrixPtr matrix;  // stored data, or the stored gather source
  bool aligned = false;
};

}  // namespace

void Session::run_pipeline(const PhysNode& node, Ctx& ctx, const StoredMatrix* out, Eigen::MatrixXd* dense) {
  const TileSpec tiles = out ? out->tiles() : node.tiles;
  std::vector<ResolvedInput> inputs;
  for (const auto& in : node.inputs) {
    ResolvedInput r;
    r.node = in.get();
    if (in->kind == PhysKind::GatherExec) {
      if (in->gather_source == PhysNode::GatherSource::Stored) r.matrix = produce(in->inputs[0], ctx);
    } else {
      r.matrix = produce(in, ctx);
      if (r.matrix->shape() != node.shape) {
        throw ShapeError("pipeline input " + to_string(r.matrix->shape()) + " does not match " +
                         to_string(node.shape));
      }
      r.aligned = r.matrix->tiles() == tiles;
    }
    inputs.push_back(std::move(r));
  }

  const Index base_pins = pool_.pinned_frames();
  pool_.reset_peak_pinned();
  const Index rows = node.shape.rows, cols = node.shape.cols;
  const Index grid_r = rows ? ceil_div(rows, tiles.tile_rows) : 0;
  const Index grid_c = cols ? ceil_div(cols, tiles.tile_cols) : 0;
  const auto steps = static_cast<std::uint64_t>(node.arithmetic_steps());
  std::vector<double> slot(node.program.size());
  std::vector<std::optional<PinnedTile>> pinned(inputs.size());

  for (Index ti = 0; ti < grid_r; ++ti) {
    for (Index tj = 0; tj < grid_c; ++tj) {
      for (std::size_t i = 0; i < inputs.size(); ++i)
        if (inputs[i].aligned) pinned[i].emplace(*inputs[i].matrix, ti, tj, pool_, AccessMode::Read);
      std::optional<PinnedTile> target;
      if (out) target.emplace(*out, ti, tj, pool_, AccessMode::Write);

      const Index r0 = ti * tiles.tile_rows, c0 = tj * tiles.tile_cols;
      const Index er = std::min(tiles.tile_rows, rows - r0), ec = std::min(tiles.tile_cols, cols - c0);
      for (Index r = 0; r < er; ++r) {
        for (Index c = 0; c < ec; ++c) {
          const Index gr = r0 + r, gc = c0 + c;
          for (std::size_t s = 0; s < node.program.size(); ++s) {
            const PipelineStep& st = node.program[s];
            double v = 0.0;
            switch (st.op) {
              case PipelineStep::Op::Input: {
                const auto& in = inputs[static_cast<std::size_t>(st.input)];
                v = in.aligned ? pinned[static_cast<std::size_t>(st.input)]->at(r, c)
                               : read_element(*in.matrix, gr, gc, pool_);
                break;
              }
              case PipelineStep::Op::Gather: {
                const auto& in = inputs[static_cast<std::size_t>(st.input)];
                const PhysNode& g = *in.node;
                const Index pos = checked_position(slot[static_cast<std::size_t>(st.a)], g.source_size);
                switch (g.gather_source) {
                  case PhysNode::GatherSource::Stored: {
                    const Index srows = in.matrix->shape().rows;
                    v = read_element(*in.matrix, pos % srows, pos / srows, pool_);
                    break;
                  }
                  case PhysNode::GatherSource::Range:
                    v = static_cast<double>(g.source_lo + g.source_step * pos);
                    break;
                  case PhysNode::GatherSource::Const:
                    v = g.source_value;
                    break;
                }
                break;
              }
              case PipelineStep::Op::RangeValue:
                v = static_cast<double>(st.lo + st.step * (gc * rows + gr));
                break;
              case PipelineStep::Op::Const:
                v = st.value;
                break;
              case PipelineStep::Op::Unary:
                v = apply_unary(st.unary, slot[static_cast<std::size_t>(st.a)]);
                break;
              case PipelineStep::Op::Binary:
                v = apply_binary(st.binary, slot[static_cast<std::size_t>(st.a)],
                                 slot[static_cast<std::size_t>(st.b)]);
                break;
              case PipelineStep::Op::Compare:
                v = apply_compare(st.compare, slot[static_cast<std::size_t>(st.a)], st.value);
                break;
              case PipelineStep::Op::Subst:
                v = slot[static_cast<std::size_t>(st.b)] != 0.0 ? st.value : slot[static_cast<std::size_t>(st.a)];
                break;
            }
            slot[s] = v;
          }
          const double result = slot[static_cast<std::size_t>(node.output_slot)];
          if (target) target->at(r, c) = result;
          if (dense) (*dense)(gr, gc) = result;
        }
      }
      pool_.add_elements_computed(steps * static_cast<std::uint64_t>(er * ec));
      for (auto& p : pinned) p.reset();
    }
  }

  const Index used = pool_.peak_pinned_frames() - base_pins;
  peak_pinned_ = std::max(peak_pinned_, used);
  if (used > static_cast<Index>(node.inputs.size()) + 1) ++pin_violations_;
}

}  // namespace riot
