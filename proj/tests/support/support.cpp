#include "support.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <unistd.h>

namespace riot::testing {

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("riot-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

Eigen::MatrixXd naive_matmul(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.cols(); ++j) {
      double sum = 0.0;
      for (Eigen::Index k = 0; k < a.cols(); ++k) sum += a(i, k) * b(k, j);
      out(i, j) = sum;
    }
  }
  return out;
}

const Eigen::MatrixXd& EagerOracle::get(const NodePtr& n) {
  if (auto it = memo_.find(n->id()); it != memo_.end()) return it->second;
  Eigen::MatrixXd out;
  auto child = [&](std::size_t i) -> const Eigen::MatrixXd& { return get(n->child(i)); };
  auto broadcast = [&](std::size_t i) -> Eigen::MatrixXd {
    const NodePtr& c = n->child(i);
    if (c->kind() == NodeKind::ScalarConst && n->shape() != c->shape())
      return Eigen::MatrixXd::Constant(n->shape().rows, n->shape().cols, c->scalar());
    return get(c);
  };
  switch (n->kind()) {
    case NodeKind::Leaf:
      out = values_.at(n->matrix().get());
      break;
    case NodeKind::ScalarConst:
      out = Eigen::MatrixXd::Constant(1, 1, n->scalar());
      break;
    case NodeKind::ElemUnary: {
      const UnaryOp op = n->unary_op();
      out = child(0).unaryExpr([op](double x) {
        switch (op) {
          case UnaryOp::Sqrt: return std::sqrt(x);
          case UnaryOp::Square: return x * x;
          case UnaryOp::Negate: return -x;
        }
        return x;
      });
      break;
    }
    case NodeKind::ElemBinary: {
      const Eigen::MatrixXd l = broadcast(0), r = broadcast(1);
      const BinaryOp op = n->binary_op();
      out = l.binaryExpr(r, [op](double a, double b) {
        switch (op) {
          case BinaryOp::Add: return a + b;
          case BinaryOp::Sub: return a - b;
          case BinaryOp::Mul: return a * b;
          case BinaryOp::Div: return a / b;
          case BinaryOp::Pow: return std::pow(a, b);
        }
        return a;
      });
      break;
    }
    case NodeKind::Compare: {
      const double t = n->scalar();
      const CompareOp op = n->compare_op();
      out = child(0).unaryExpr([t, op](double x) {
        bool v = false;
        switch (op) {
          case CompareOp::Gt: v = x > t; break;
          case CompareOp::Ge: v = x >= t; break;
          case CompareOp::Lt: v = x < t; break;
          case CompareOp::Le: v = x <= t; break;
          case CompareOp::Eq: v = x == t; break;
        }
        return v ? 1.0 : 0.0;
      });
      break;
    }
    case NodeKind::Subst: {
      const Eigen::MatrixXd& x = child(0);
      const Eigen::MatrixXd& m = child(1);
      out = x;
      for (Eigen::Index i = 0; i < x.size(); ++i)
        if (m(i) != 0.0) out(i) = n->scalar();
      break;
    }
    case NodeKind::Gather: {
      const Eigen::MatrixXd& x = child(0);
      const Eigen::MatrixXd& idx = child(1);
      out.resize(idx.rows(), 1);
      for (Eigen::Index i = 0; i < idx.rows(); ++i) {
        const double v = idx(i);
        if (v < 1 || v > static_cast<double>(x.size()) || v != std::floor(v))
          throw IndexError("oracle: index out of range");
        out(i) = x(static_cast<Eigen::Index>(v) - 1);  // column-major position
      }
      break;
    }
    case NodeKind::Range: {
      const Index lo = n->range_lo(), hi = n->range_hi();
      out.resize(n->shape().rows, 1);
      const Index step = hi >= lo ? 1 : -1;
      for (Index i = 0; i < n->shape().rows; ++i) out(i) = static_cast<double>(lo + step * i);
      break;
    }
    case NodeKind::MatMul:
      out = naive_matmul(child(0), child(1));
      break;
    case NodeKind::Sample: {
      const auto idx = sample_indices(n->sample_population(), n->sample_count(), n->sample_seed());
      out.resize(static_cast<Eigen::Index>(idx.size()), 1);
      for (std::size_t i = 0; i < idx.size(); ++i) out(static_cast<Eigen::Index>(i)) = static_cast<double>(idx[i]);
      break;
    }
  }
  return memo_.emplace(n->id(), std::move(out)).first->second;
}

Eigen::MatrixXd EagerOracle::eval(const NodePtr& root) {
  Eigen::MatrixXd out = get(root);
  memo_.clear();
  return out;
}

bool bit_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = a(i), y = b(i);
    if (std::isnan(x) && std::isnan(y)) continue;
    if (std::memcmp(&x, &y, sizeof x) != 0) return false;
  }
  return true;
}

double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double floor) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double denom = std::max(std::fabs(b(i)), floor);
    worst = std::max(worst, std::fabs(a(i) - b(i)) / denom);
  }
  return worst;
}

MatrixPtr store(const std::filesystem::path& path, const Eigen::MatrixXd& values, BufferPool& pool,
                EagerOracle* oracle) {
  const Shape shape{values.rows(), values.cols()};
  auto m = import_matrix(path, values, TileSpec::default_for(shape, pool.budget().block_scalars),
                         Linearization::TileRowMajor, pool);
  pool.flush(*m->file());
  if (oracle) oracle->bind(m.get(), values);
  return m;
}

namespace {

class Generator {
 public:
  Generator(std::mt19937_64& rng, const std::filesystem::path& dir, BufferPool& pool, EagerOracle& oracle,
            const RandomProgramOptions& opts)
      : rng_(rng), dir_(dir), pool_(pool), oracle_(oracle), opts_(opts) {}

  RandomProgram vector_program() {
    n_ = uniform(1, opts_.max_vector);
    const int nleaves = static_cast<int>(uniform(1, 3));
    for (int i = 0; i < nleaves; ++i) {
      Eigen::MatrixXd v(n_, 1);
      for (Index r = 0; r < n_; ++r) v(r) = value();
      auto m = store(dir_ / ("leaf" + std::to_string(counter_++) + ".riot"), v, pool_, &oracle_);
      prog_.leaves.push_back(m);
      by_len_[n_].push_back(leaf(m, "v" + std::to_string(i)));
    }
    Index out_len = n_;
    if (chance(0.5)) out_len = uniform(0, std::min<Index>(n_, 50));
    prog_.root = vec(out_len, opts_.max_depth);
    return prog_;
  }

  RandomProgram matrix_program() {
    prog_.has_matmul = true;
    const int k = static_cast<int>(uniform(2, 4));
    std::vector<Index> dims;
    for (int i = 0; i <= k; ++i) dims.push_back(uniform(1, opts_.max_matrix_dim));
    std::vector<NodePtr> mats;
    for (int i = 0; i < k; ++i) {
      Eigen::MatrixXd v(dims[static_cast<std::size_t>(i)], dims[static_cast<std::size_t>(i) + 1]);
      for (Index j = 0; j < v.size(); ++j) v(j) = std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
      auto m = store(dir_ / ("mat" + std::to_string(counter_++) + ".riot"), v, pool_, &oracle_);
      prog_.leaves.push_back(m);
      NodePtr x = leaf(m, "M" + std::to_string(i));
      if (chance(0.3)) x = binary(BinaryOp::Add, x, constant(0.5));
      if (chance(0.2)) x = unary(UnaryOp::Sqrt, x);
      mats.push_back(x);
    }
    NodePtr acc = mats[0];
    for (int i = 1; i < k; ++i) acc = matmul(acc, mats[static_cast<std::size_t>(i)]);
    if (chance(0.5)) acc = binary(BinaryOp::Mul, acc, constant(2.0));
    if (chance(0.3)) acc = binary(BinaryOp::Add, acc, acc);
    if (chance(0.3) && acc->shape().size() > 0) {
      const Index len = uniform(1, std::min<Index>(acc->shape().size(), 30));
      acc = gather(acc, sample(acc->shape().size(), len, rng_()));
    }
    prog_.root = acc;
    return prog_;
  }

 private:
  Index uniform(Index lo, Index hi) { return std::uniform_int_distribution<Index>(lo, hi)(rng_); }
  bool chance(double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng_) < p; }
  double value() {
    // Small integers and halves keep compare thresholds meaningful; some
    // negatives exercise NaN from sqrt.
    return static_cast<double>(uniform(-8, 24)) * 0.5;
  }

  // Index vector of `len` positions into a vector of length n_.
  NodePtr index(Index len) {
    if (len == 0) return sample(n_, 0, rng_());
    const int pick = static_cast<int>(uniform(0, 3));
    if (pick == 0 && len <= n_) {
      const Index lo = uniform(1, n_ - len + 1);
      return chance(0.5) ? range(lo, lo + len - 1) : range(lo + len - 1, lo);
    }
    if (pick == 1 && len <= n_) return sample(n_, len, rng_());
    if (pick == 2 && len <= n_) {
      // Index of an index: positions into a sample.
      const Index k = uniform(len, n_);
      return gather(sample(n_, k, rng_()), sample(k, len, rng_()));
    }
    // Repeated positions are allowed.
    const Index m = std::min<Index>(n_, len);
    NodePtr s = sample(n_, m, rng_());
    return gather(s, binary(BinaryOp::Add, binary(BinaryOp::Mul, range(1, len), constant(0.0)),
                            constant(static_cast<double>(uniform(1, m)))));
  }

  NodePtr mask(Index len, int depth) {
    NodePtr m = compare(static_cast<CompareOp>(uniform(0, 4)), vec(len, depth - 1),
                        static_cast<double>(uniform(-4, 20)) * 0.5);
    if (chance(0.2)) m = binary(BinaryOp::Mul, m, compare(CompareOp::Lt, vec(len, depth - 1), 10.0));
    return m;
  }

  NodePtr vec(Index len, int depth) {
    auto& pool = by_len_[len];
    if (!pool.empty() && (depth <= 0 || chance(0.2)))
      return pool[static_cast<std::size_t>(uniform(0, static_cast<Index>(pool.size()) - 1))];
    if (depth <= 0 && len != n_) return gather(vec(n_, 0), index(len));
    NodePtr out;
    switch (uniform(0, 6)) {
      case 0:
        out = unary(static_cast<UnaryOp>(uniform(0, 2)), vec(len, depth - 1));
        break;
      case 1:
      case 2: {
        NodePtr l = vec(len, depth - 1);
        NodePtr r = chance(0.3) ? constant(static_cast<double>(uniform(-4, 8)) * 0.5) : vec(len, depth - 1);
        if (chance(0.5)) std::swap(l, r);
        out = binary(static_cast<BinaryOp>(uniform(0, 4)), l, r);
        break;
      }
      case 3:
        out = compare(static_cast<CompareOp>(uniform(0, 4)), vec(len, depth - 1),
                      static_cast<double>(uniform(-4, 20)) * 0.5);
        break;
      case 4:
        out = subst(vec(len, depth - 1), mask(len, depth), static_cast<double>(uniform(-4, 20)) * 0.5);
        break;
      default:
        out = gather(vec(n_, depth - 1), index(len));
    }
    if (out->kind() == NodeKind::ScalarConst || out->shape() != Shape{len, 1}) out = vec(len, 0);
    pool.push_back(out);
    return out;
  }

  std::mt19937_64& rng_;
  std::filesystem::path dir_;
  BufferPool& pool_;
  EagerOracle& oracle_;
  RandomProgramOptions opts_;
  RandomProgram prog_;
  Index n_ = 1;
  int counter_ = 0;
  std::map<Index, std::vector<NodePtr>> by_len_;
};

}  // namespace

RandomProgram random_program(std::mt19937_64& rng, const std::filesystem::path& dir, BufferPool& pool,
                             EagerOracle& oracle, const RandomProgramOptions& opts) {
  Generator g(rng, dir, pool, oracle, opts);
  return opts.matmul ? g.matrix_program() : g.vector_program();
}

}  // namespace riot::testing
