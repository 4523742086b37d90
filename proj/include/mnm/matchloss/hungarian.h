#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace mnm::loss {

inline constexpr int kBackground = -1;

struct MatchResult {
  // gt index -> proposal index
  std::vector<std::size_t> assignment;
  // proposal index -> gt index, kBackground if unassigned
  std::vector<int> proposal_to_gt;
  double total_cost = 0;
};

// Minimum-cost injective assignment of the G rows (ground truths) of `cost`
// to its N columns (proposals). Throws ConfigError if G > N and NumericError
// for non-finite costs. O(G^2 N).
MatchResult Hungarian(const Eigen::MatrixXd& cost);

// Sum of cost(g, assignment[g]) in ground-truth order.
double AssignmentCost(const Eigen::MatrixXd& cost,
                      const std::vector<std::size_t>& assignment);

}  // namespace mnm::loss
