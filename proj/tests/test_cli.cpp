#include <doctest.h>

#include "support.hpp"

#include <riot/cli.hpp>
#include <riot/tiled_store.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

using namespace riot;
using riot::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string write_script(const TempDir& dir, const std::string& name, const std::string& text) {
  const auto path = dir / name;
  std::ofstream(path) << text;
  return path.string();
}

std::uint64_t counter(const std::string& err, const std::string& key) {
  const auto at = err.find(key + "=");
  REQUIRE(at != std::string::npos);
  return std::stoull(err.substr(at + key.size() + 1));
}

}  // namespace

TEST_CASE("gen writes the same values whatever the tiling") {
  TempDir dir;
  const std::string store = dir.path().string();
  CHECK(cli({"--store", store, "--block", "16", "--memory", "64", "gen", "a", "9", "7"}).code == 0);
  CHECK(cli({"--store", store, "--block", "16", "--memory", "64", "gen", "b", "9", "7", "--tiling", "rows", "--lin",
             "z"})
            .code == 0);
  BufferPool pool({64, 16});
  const auto a = export_matrix(*StoredMatrix::open(dir / "a.riot"), pool);
  const auto b = export_matrix(*StoredMatrix::open(dir / "b.riot"), pool);
  CHECK(a == b);
  CHECK(a(3, 4) == uniform_at(42, 3, 4));
  CHECK(StoredMatrix::open(dir / "b.riot")->tiles().kind == LayoutKind::RowStrips);
  CHECK(StoredMatrix::open(dir / "b.riot")->linearization() == Linearization::ZOrder);
}

TEST_CASE("run: optimized and unoptimized print the same values") {
  TempDir dir;
  const std::string store = dir.path().string();
  REQUIRE(cli({"--store", store, "gen", "x", "100000", "1"}).code == 0);
  REQUIRE(cli({"--store", store, "gen", "y", "100000", "1", "--seed", "7"}).code == 0);
  const auto script = write_script(dir, "d.r",
                                   "d <- sqrt((x-0.5)^2+(y-0.25)^2) + sqrt((x-0.75)^2+(y-1)^2)\n"
                                   "s <- sample(100000, 20)\n"
                                   "print(d[s])\n");
  const Result fast = cli({"--store", store, "run", script});
  const Result slow = cli({"--store", store, "--no-optimize", "run", script});
  REQUIRE(fast.code == 0);
  REQUIRE(slow.code == 0);
  CHECK(fast.out == slow.out);
  CHECK(std::count(fast.out.begin(), fast.out.end(), '\n') == 20);
  CHECK(counter(fast.err, "blocks_read") < counter(slow.err, "blocks_read"));
  CHECK(counter(slow.err, "blocks_read") >= 2 * 98);

  const Result stats = cli({"--store", store, "stats"});
  CHECK(stats.code == 0);
  CHECK(stats.out.find("blocks_read: " + std::to_string(counter(slow.err, "blocks_read"))) != std::string::npos);
}

TEST_CASE("explain shows the reordered chain and performs no I/O") {
  TempDir dir;
  const std::string store = dir.path().string();
  for (auto [name, r, c] : {std::tuple{"A", "200", "10"}, std::tuple{"B", "10", "200"}, std::tuple{"C", "200", "10"}})
    REQUIRE(cli({"--store", store, "gen", name, r, c}).code == 0);
  const auto script = write_script(dir, "m.r", "print(A %*% B %*% C)\n");
  const Result r = cli({"--store", store, "explain", script});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("chain order: A(BC)") != std::string::npos);
  CHECK(r.out.find("-- optimized DAG") != std::string::npos);
  CHECK(r.out.find("BlockedMatMul p=") != std::string::npos);
  CHECK(r.out.find("estimated blocks: ") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / ".riot-stats.json"));

  const Result written = cli({"--store", store, "--no-optimize", "explain", script});
  CHECK(written.out.find("chain order: (AB)C") != std::string::npos);
}

TEST_CASE("clamp program prints ten oracle values") {
  TempDir dir;
  const std::string store = dir.path().string();
  REQUIRE(cli({"--store", store, "gen", "u", "5000", "1"}).code == 0);
  const auto script = write_script(dir, "c.r", "a <- u * 20\nb <- a^2; b[b>100] <- 100; print b[1:10]\n");
  const Result r = cli({"--store", store, "run", script});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  for (Index i = 0; i < 10; ++i) {
    double v = 0;
    lines >> v;
    const double a = uniform_at(42, i, 0) * 20;
    const double b = std::pow(a, 2.0);
    CHECK(v == (b > 100 ? 100.0 : b));
  }
  CHECK(counter(r.err, "elements_computed") <= 40);
}

TEST_CASE("exit codes") {
  TempDir dir;
  const std::string store = dir.path().string();
  CHECK(cli({"--help"}).code == 0);
  CHECK(cli({}).code == 1);
  CHECK(cli({"frobnicate"}).code == 1);
  CHECK(cli({"--store", store, "run", (dir / "missing.r").string()}).code == 2);
  CHECK(cli({"--store", store, "stats"}).code == 2);
  const auto bad = write_script(dir, "bad.r", "print(nope)\n");
  const Result r = cli({"--store", store, "run", bad});
  CHECK(r.code == 1);
  CHECK(r.err.find("line 1") != std::string::npos);
  CHECK(cli({"--store", store, "--memory", "100", "--block", "64", "gen", "q", "2", "2"}).code == 1);
}

TEST_CASE("costlab prints CSV") {
  const Result r = cli({"costlab"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("strategy,order,blocks\n", 0) == 0);
  CHECK(r.out.find("SquareOptOrder,A(BC),") != std::string::npos);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 5);

  const Result sweep = cli({"costlab", "--sweep", "s=2:4:1"});
  REQUIRE(sweep.code == 0);
  CHECK(sweep.out.rfind("s,strategy,order,blocks\n", 0) == 0);
  CHECK(std::count(sweep.out.begin(), sweep.out.end(), '\n') == 1 + 3 * 4);
  CHECK(cli({"costlab", "--sweep", "bogus"}).code == 1);
}
