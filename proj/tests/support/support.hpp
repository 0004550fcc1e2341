#pragma once

#include <riot/buffer_pool.hpp>
#include <riot/expr.hpp>
#include <riot/tiled_store.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace riot::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Straightforward in-memory interpreter: every node is computed in full,
/// leaves come from `values` (keyed by the stored matrix), matmul is the
/// naive triple loop.
class EagerOracle {
 public:
  void bind(const StoredMatrix* m, Eigen::MatrixXd values) { values_[m] = std::move(values); }
  Eigen::MatrixXd eval(const NodePtr& root);

 private:
  const Eigen::MatrixXd& get(const NodePtr& n);
  std::map<const StoredMatrix*, Eigen::MatrixXd> values_;
  std::map<NodeId, Eigen::MatrixXd> memo_;
};

Eigen::MatrixXd naive_matmul(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// Equal element by element; NaN matches NaN.
bool bit_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
/// Largest |a-b| / max(|b|, floor) over all elements.
double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor = 1e-300);

/// A randomly generated program over fresh stored leaves.
struct RandomProgram {
  NodePtr root;
  std::vector<MatrixPtr> leaves;
  bool has_matmul = false;
};

struct RandomProgramOptions {
  Index max_vector = 1000;
  Index max_matrix_dim = 64;
  bool matmul = false;
  int max_depth = 5;
};

/// Builds leaves under `dir` through `pool` and registers them with `oracle`.
RandomProgram random_program(std::mt19937_64& rng, const std::filesystem::path& dir, BufferPool& pool,
                             EagerOracle& oracle, const RandomProgramOptions& opts);

/// Store `values` as a matrix with the default tiling for its shape.
MatrixPtr store(const std::filesystem::path& path, const Eigen::MatrixXd& values, BufferPool& pool,
                EagerOracle* oracle = nullptr);

}  // namespace riot::testing
