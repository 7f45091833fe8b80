#pragma once

#include <string>

#include "peierls/bloch.hpp"
#include "peierls/host.hpp"
#include "peierls/wannier.hpp"

namespace fixtures {

using namespace peierls;

/// One site per cell of Z, no hopping, onsite energy u.
inline HostModel decoupled_site(double u) {
  return hopping_list_host("0 0 0 0 " + std::to_string(u) + " 0", {Vec2(1.0, 0.0)}, {Vec2::Zero()});
}

/// Nearest-neighbour chain with unit hopping.
inline HostModel free_chain() {
  return hopping_list_host("0 0 1 0 1 0\n0 0 -1 0 1 0", {Vec2(1.0, 0.0)}, {Vec2::Zero()});
}

inline HostModel harper_host() { return square2d(2, {-3.0, 0.0, 0.0, 0.0}, 1.0); }

inline Interval harper_interval() { return {-6.5, -2.5}; }

inline BlochFrame frame_for(const HostModel& host, const Interval& interval, int m,
                            std::optional<MatrixXcd> trials = std::nullopt) {
  const auto grid = bz_grid(host.lattice(), m);
  const auto island = detect_island(band_structure(host, grid), interval);
  return smooth_frame(host, island, grid, trials);
}

}  // namespace fixtures
