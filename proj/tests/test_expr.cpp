#include <doctest.h>

#include "support.hpp"

#include <riot/expr.hpp>

#include <algorithm>
#include <set>

using namespace riot;
using riot::testing::TempDir;

namespace {

struct Vectors {
  TempDir dir;
  BufferPool pool{ResourceBudget{64 * 16, 16}};
  Expr x, y;
  explicit Vectors(Index n)
      : x(leaf(StoredMatrix::create(dir / "x.riot", {n, 1}, TileSpec::col_strips(16), Linearization::TileRowMajor, 16),
               "x")),
        y(leaf(StoredMatrix::create(dir / "y.riot", {n, 1}, TileSpec::col_strips(16), Linearization::TileRowMajor, 16),
               "y")) {}
};

Expr distance(const Expr& x, const Expr& y, double xs, double ys, double xe, double ye) {
  return sqrt(pow(x - xs, 2.0) + pow(y - ys, 2.0)) + sqrt(pow(x - xe, 2.0) + pow(y - ye, 2.0));
}

}  // namespace

TEST_CASE("building a DAG performs no I/O and no arithmetic") {
  Vectors v(1000);
  v.pool.reset_counters();
  Expr d = distance(v.x, v.y, 0, 0, 1, 1);
  Expr z = d[sample(1000, 100, 1)];
  Expr b = subst(pow(v.x, 2.0), pow(v.x, 2.0) > 100.0, 100.0);
  (void)z;
  (void)b;
  CHECK(v.pool.stats() == IoCounters{});
}

TEST_CASE("shape rules") {
  Vectors v(10);
  CHECK((v.x + v.y).shape() == Shape{10, 1});
  CHECK((v.x * 2.0).shape() == Shape{10, 1});
  CHECK((2.0 - v.x).shape() == Shape{10, 1});
  CHECK(range(1, 10)->shape() == Shape{10, 1});
  CHECK(range(5, 3)->shape() == Shape{3, 1});
  CHECK(sample(100, 7, 3)->shape() == Shape{7, 1});
  CHECK(Expr(v.x)[range(2, 4)].shape() == Shape{3, 1});
  CHECK(subst(v.x, v.x > 1.0, 0.0)->shape() == Shape{10, 1});

  TempDir dir;
  auto mat = [&](const char* name, Index r, Index c) {
    return leaf(StoredMatrix::create(dir / name, {r, c}, TileSpec::square(16), Linearization::TileRowMajor, 16),
                name);
  };
  CHECK(matmul(mat("a", 3, 4), mat("b", 4, 2))->shape() == Shape{3, 2});
  try {
    matmul(mat("c", 3, 4), mat("d", 5, 2));
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3x4") != std::string::npos);
    CHECK(msg.find("5x2") != std::string::npos);
  }
  Vectors w(11);
  CHECK_THROWS_AS(v.x + w.x, ShapeError);
}

TEST_CASE("gather and subst validation") {
  Vectors v(10);
  CHECK_THROWS_AS(gather(v.x, v.x > 1.0), ShapeError);
  CHECK_THROWS_AS(subst(v.x, v.y, 0.0), ShapeError);
  CHECK_THROWS_AS(subst(v.x, range(1, 3) > 1.0, 0.0), ShapeError);
  CHECK_NOTHROW(subst(v.x, (v.x > 1.0) * (v.y < 2.0), 0.0));
  CHECK_THROWS_AS(sample(5, 6, 1), ShapeError);
}

TEST_CASE("snapshot semantics under rebinding") {
  Vectors v(10);
  Environment env;
  env.assign("a", v.x);
  env.assign("b", pow(Expr(env.lookup("a")), 2.0));
  const NodePtr b_before = env.lookup("b");
  env.assign("a", Expr(env.lookup("a")) + 1.0);
  CHECK(env.lookup("b") == b_before);
  CHECK(b_before->child(0) == v.x.node());
  CHECK(env.dependencies("b").count(v.x.node()->id()) == 1);
  CHECK(env.leaf_inputs("a") == std::set<std::string>{"x"});
  CHECK_THROWS_AS(env.lookup("nope"), ShapeError);
}

TEST_CASE("distance program has twelve intermediates") {
  Vectors v(100);
  Expr d = distance(v.x, v.y, 1, 2, 3, 4);
  CHECK(count_intermediates(d) == 12);
  CHECK(count_operations(d) == 13);
  const auto nodes = topological_order(d);
  const auto interior = std::count_if(nodes.begin(), nodes.end(), [](const NodePtr& n) {
    return n->kind() != NodeKind::Leaf && n->kind() != NodeKind::ScalarConst;
  });
  CHECK(interior == 13);
}

TEST_CASE("gathering from a named result shares its subgraph") {
  Vectors v(100);
  Expr d = distance(v.x, v.y, 1, 2, 3, 4);
  Expr z = d[sample(100, 10, 5)];
  CHECK(z.node()->child(0) == d.node());
  const auto before = topological_order(d).size();
  CHECK(topological_order(z).size() == before + 2);
  Expr twice = d + d;
  CHECK(consumer_counts(twice).at(d.node()->id()) == 1);
  Expr shared = pow(v.x, 2.0);
  Expr both = shared + sqrt(shared);
  CHECK(consumer_counts(both).at(shared.node()->id()) == 2);
}

TEST_CASE("topological order puts children first, each once") {
  Vectors v(10);
  Expr s = v.x + v.y;
  Expr r = s * s - v.x;
  const auto order = topological_order(r);
  std::set<NodeId> seen;
  for (const auto& n : order) {
    for (const auto& c : n->children()) CHECK(seen.count(c->id()) == 1);
    CHECK(seen.insert(n->id()).second);
  }
  CHECK(order.back() == r.node());
}

TEST_CASE("dump format") {
  Vectors v(10);
  Expr g = Expr(v.x + 1.0)[range(1, 3)];
  const std::string dump = dump_dag(g);
  const auto xid = v.x.node()->id();
  CHECK(dump.find("n" + std::to_string(xid) + " Leaf[x] () 10x1\n") != std::string::npos);
  CHECK(dump.find("Range[1:3] () 3x1\n") != std::string::npos);
  CHECK(dump.find("ElemBinary[add] (n" + std::to_string(xid) + ",") != std::string::npos);
  CHECK(std::count(dump.begin(), dump.end(), '\n') == 5);
}

TEST_CASE("with_children rebuilds the same operation") {
  Vectors v(10);
  Expr c = v.x > 3.0;
  NodePtr rebuilt = with_children(c, {v.y.node()});
  CHECK(rebuilt->kind() == NodeKind::Compare);
  CHECK(rebuilt->compare_op() == CompareOp::Gt);
  CHECK(rebuilt->scalar() == 3.0);
  CHECK(rebuilt->child(0) == v.y.node());
  CHECK(rebuilt->id() != c.node()->id());
}

TEST_CASE("sample_indices draws distinct values deterministically") {
  const auto a = sample_indices(1000, 100, 42);
  const auto b = sample_indices(1000, 100, 42);
  CHECK(a == b);
  CHECK(sample_indices(1000, 100, 43) != a);
  std::set<Index> distinct(a.begin(), a.end());
  CHECK(distinct.size() == 100);
  CHECK(*distinct.begin() >= 1);
  CHECK(*distinct.rbegin() <= 1000);

  auto all = sample_indices(50, 50, 9);
  std::sort(all.begin(), all.end());
  for (Index i = 0; i < 50; ++i) CHECK(all[static_cast<std::size_t>(i)] == i + 1);
  CHECK(sample_indices(10, 0, 1).empty());
  CHECK(sample_indices(Index{1} << 40, 3, 1).size() == 3);
}

TEST_CASE("sample draws are roughly uniform") {
  std::vector<int> hits(10, 0);
  for (std::uint64_t seed = 0; seed < 5000; ++seed) ++hits[static_cast<std::size_t>(sample_indices(10, 1, seed)[0] - 1)];
  for (int h : hits) {
    CHECK(h > 400);
    CHECK(h < 600);
  }
}

TEST_CASE("uniform_at is deterministic and in range") {
  CHECK(uniform_at(1, 2, 3) == uniform_at(1, 2, 3));
  CHECK(uniform_at(1, 2, 3) != uniform_at(2, 2, 3));
  for (Index i = 0; i < 1000; ++i) {
    const double u = uniform_at(7, i, i % 3);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}
