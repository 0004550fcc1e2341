#include <riot/cost_lab.hpp>
#include <riot/optimizer.hpp>

#include <cmath>

namespace riot {

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::RiotDb: return "RiotDb";
    case Strategy::BnljInspired: return "BnljInspired";
    case Strategy::SquareInOrder: return "SquareInOrder";
    case Strategy::SquareOptOrder: return "SquareOptOrder";
  }
  return "?";
}

double cost_matmul(Strategy s, double m, double l, double n, double M, double B) {
  switch (s) {
    case Strategy::BnljInspired:
      return m * l * n * (l + n) / (B * M) + (m * l + l * n + m * n) / B;
    case Strategy::SquareInOrder:
    case Strategy::SquareOptOrder: {
      const double p = std::sqrt(M / 3.0);
      return (2.0 * (p * p / B) * (l / p) + p * p / B) * (m * n / (p * p));
    }
    case Strategy::RiotDb:
      return 3.0 * (m * l + l * n) / B + 4.0 * m * l * n / B + m * n / B;
  }
  return 0.0;
}

void CostScenario::validate() const {
  if (!(s > 1.0)) throw Error("skew factor s must be > 1");
  if (!(n / s >= 1.0)) throw Error("n / s must be at least 1");
  if (!(block > 0) || !(memory >= 3 * block)) throw Error("memory must hold at least three blocks");
}

namespace {

double plan_cost(const ChainPlan<double>& plan, Strategy s, double M, double B) {
  double total = 0;
  for (const auto& st : plan.steps) {
    if (st.left < 0) continue;
    const auto& left = plan.steps[static_cast<std::size_t>(st.left)];
    total += cost_matmul(s, plan.dims[static_cast<std::size_t>(st.first)],
                         plan.dims[static_cast<std::size_t>(left.last + 1)],
                         plan.dims[static_cast<std::size_t>(st.last + 1)], M, B);
  }
  return total;
}

}  // namespace

std::vector<StrategyCost> chain_costs(const std::vector<double>& dims, double M, double B,
                                      const std::vector<std::string>& names) {
  const auto in_order = ChainPlan<double>::left_deep(dims);
  const auto best = order_chain<double>(dims);
  std::vector<StrategyCost> out;
  for (Strategy s : {Strategy::RiotDb, Strategy::BnljInspired, Strategy::SquareInOrder, Strategy::SquareOptOrder}) {
    const auto& plan = s == Strategy::SquareOptOrder ? best : in_order;
    out.push_back({s, plan_cost(plan, s, M, B), plan.parenthesization(names)});
  }
  return out;
}

std::vector<StrategyCost> scenario_chain3(const CostScenario& sc) {
  sc.validate();
  return chain_costs(sc.dims(), sc.memory, sc.block, {"A", "B", "C"});
}

double lower_bound_single(double m, double l, double n, double M, double B) {
  return l * m * n / (B * std::sqrt(M));
}

double lower_bound_chain(const std::vector<double>& dims, double M, double B) {
  if (dims.size() < 3) return 0.0;
  return order_chain<double>(dims).multiplications / (B * std::sqrt(M));
}

}  // namespace riot
