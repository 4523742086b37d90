#include "mnm/matchloss/hungarian.h"

#include <cmath>
#include <limits>
#include <string>

#include "mnm/common/error.h"

namespace mnm::loss {

double AssignmentCost(const Eigen::MatrixXd& cost,
                      const std::vector<std::size_t>& assignment) {
  double total = 0;
  for (std::size_t g = 0; g < assignment.size(); ++g) {
    total += cost(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(assignment[g]));
  }
  return total;
}

// Shortest augmenting paths with row/column potentials, 1-based with a
// virtual column 0.
MatchResult Hungarian(const Eigen::MatrixXd& cost) {
  const auto rows = static_cast<std::size_t>(cost.rows());
  const auto cols = static_cast<std::size_t>(cost.cols());
  if (rows > cols) {
    throw ConfigError("hungarian: " + std::to_string(rows) + " ground truths but only " +
                      std::to_string(cols) + " proposals");
  }
  if (!cost.allFinite()) throw NumericError("hungarian: non-finite cost");

  MatchResult result;
  result.proposal_to_gt.assign(cols, kBackground);
  if (rows == 0) return result;

  constexpr double kInf = std::numeric_limits<double>::infinity();
  auto c = [&](std::size_t i, std::size_t j) {
    return cost(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 1));
  };
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<std::size_t> p(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(cols + 1, kInf);
    std::vector<bool> used(cols + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = c(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  result.assignment.assign(rows, 0);
  for (std::size_t j = 1; j <= cols; ++j) {
    if (p[j] != 0) {
      result.assignment[p[j] - 1] = j - 1;
      result.proposal_to_gt[j - 1] = static_cast<int>(p[j] - 1);
    }
  }
  result.total_cost = AssignmentCost(cost, result.assignment);
  return result;
}

}  // namespace mnm::loss
