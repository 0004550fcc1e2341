#pragma once

#include <riot/common.hpp>

#include <string>
#include <vector>

namespace riot {

enum class Strategy { RiotDb, BnljInspired, SquareInOrder, SquareOptOrder };
const char* to_string(Strategy s);

/// Closed-form block I/O of one product A(m x l) * B(l x n) under memory M
/// and block size B (both in scalars). Input and output scan terms are kept.
///
///   BnljInspired: mln(l+n)/(BM) + (ml + ln + mn)/B
///   Square*:      (2(p^2/B)(l/p) + p^2/B)(mn/p^2),  p = sqrt(M/3)
///   RiotDb:       3(ml + ln)/B + 4mln/B + mn/B
///                 (hash join of the inputs, two-pass external sort of the
///                 mln join tuples, aggregate output)
double cost_matmul(Strategy s, double m, double l, double n, double memory, double block);

/// A: n x n/s, B: n/s x n, C: n x n.
struct CostScenario {
  double n = 100000;
  double s = 4;
  double memory = 268435456.0;
  double block = 1024;

  void validate() const;  // throws Error
  std::vector<double> dims() const { return {n, n / s, n, n}; }
};

struct StrategyCost {
  Strategy strategy;
  double blocks = 0;
  std::string order;
};

/// Cost of every strategy on the chain with `dims`. Square/Opt-Order orders
/// the chain by scalar multiplications first; the others follow program order.
std::vector<StrategyCost> chain_costs(const std::vector<double>& dims, double memory, double block,
                                      const std::vector<std::string>& names = {});

/// All four strategies for A B C, sorted by strategy.
std::vector<StrategyCost> scenario_chain3(const CostScenario& sc);

/// lmn / (B sqrt(M)).
double lower_bound_single(double m, double l, double n, double memory, double block);
/// N / (B sqrt(M)) with N the optimal multiplication count of the chain.
double lower_bound_chain(const std::vector<double>& dims, double memory, double block);

}  // namespace riot
