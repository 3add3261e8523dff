#pragma once

#include <cstddef>
#include <limits>
#include <vector>

namespace rlmatch {

// Dense rectangular min-cost assignment, Kuhn-Munkres with row/column
// potentials and shortest augmenting paths, O(rows^2 * cols).
//
// cost is row-major rows x cols with rows <= cols. Every row is assigned to a
// distinct column; the returned vector maps row -> column.
template <typename T>
std::vector<std::size_t> min_cost_assignment(const std::vector<T>& cost, std::size_t rows, std::size_t cols) {
  if (rows == 0) return {};
  const T inf = std::numeric_limits<T>::max();
  // 1-based internally; index 0 is the virtual source row/column.
  std::vector<T> u(rows + 1, T{}), v(cols + 1, T{});
  std::vector<std::size_t> owner(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<T> minv(cols + 1, inf);
    std::vector<bool> used(cols + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = owner[j0];
      T delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const T cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
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
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(rows, 0);
  for (std::size_t j = 1; j <= cols; ++j) {
    if (owner[j] != 0) assignment[owner[j] - 1] = j - 1;
  }
  return assignment;
}

}  // namespace rlmatch
