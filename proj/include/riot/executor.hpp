#pragma once

#include <riot/buffer_pool.hpp>
#include <riot/expr.hpp>
#include <riot/optimizer.hpp>
#include <riot/tiled_store.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <unordered_map>
#include <vector>

namespace riot {

/// Submatrix schedule for one blocked product: three q x q groups of square
/// tiles (A, B and the accumulator T) are resident at once.
struct MatmulSchedule {
  Index p = 0;     // submatrix side in scalars
  Index q = 0;     // submatrix side in tiles
  Index tile = 0;  // square tile side
};

MatmulSchedule make_schedule(const ResourceBudget& budget);

/// out = A * B. All three matrices must be square-tiled with the schedule's
/// tile side. Loop order is i (result rows), j (result cols), k (inner); each
/// result scalar accumulates its l products in ascending k.
void exec_matmul_blocked(const StoredMatrix& A, const StoredMatrix& B, const StoredMatrix& out,
                         const MatmulSchedule& schedule, BufferPool& pool);

/// Multiply `operands` in the order of `plan`, one product at a time. Each
/// intermediate is a temporary square-tiled file under `temp_dir`, dropped
/// once its consumer is done. A chain of one matrix returns it unchanged.
MatrixPtr exec_chain(const ChainPlan<Index>& plan, const std::vector<MatrixPtr>& operands,
                     BufferPool& pool, const std::filesystem::path& temp_dir);

struct RunReport {
  IoCounters io;
  Index peak_pinned_blocks = 0;
  Index pipeline_pin_violations = 0;  // pipelines that pinned more than inputs + 1 blocks
};

/// One evaluation context: a buffer pool, a scratch directory and the stored
/// results of nodes already materialized in this context.
class Session {
 public:
  Session(ResourceBudget budget, std::filesystem::path temp_dir, PlanOptions options = {});
  ~Session();
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  BufferPool& pool() { return pool_; }
  const PlanOptions& options() const { return options_; }

  PhysicalPlan prepare(const NodePtr& root) const;
  Eigen::MatrixXd evaluate(const NodePtr& root) { return execute(prepare(root)); }
  Eigen::MatrixXd execute(const PhysicalPlan& plan);

  /// Evaluate `root` into a new file at `path`.
  MatrixPtr materialize(const NodePtr& root, const std::filesystem::path& path, TileSpec tiles,
                        Linearization lin = Linearization::TileRowMajor);

  RunReport report() const;
  void reset_counters();

 private:
  struct Ctx;
  MatrixPtr produce(const PhysPtr& node, Ctx& ctx);
  MatrixPtr run_materialize(const PhysNode& node, const MatrixPtr& target, Ctx& ctx);
  void run_pipeline(const PhysNode& node, Ctx& ctx, const StoredMatrix* out, Eigen::MatrixXd* dense);
  std::filesystem::path temp_path();

  ResourceBudget budget_;
  std::filesystem::path temp_dir_;
  PlanOptions options_;
  BufferPool pool_;
  std::unordered_map<NodeId, MatrixPtr> cache_;
  std::uint64_t temp_counter_ = 0;
  Index peak_pinned_ = 0;
  Index pin_violations_ = 0;
};

}  // namespace riot
