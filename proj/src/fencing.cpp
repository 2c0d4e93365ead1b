#include "stgame/fencing.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stgame::fencing {

int referee_step(RefereeState& state, const FencingTick& tick,
                 const RefereeConfig& config) {
  int delta = 0;
  if (tick.bat_a_in_target) delta += tick.bats_contact ? -10 : 1;

  if (tick.bat_p_in_target) {
    ++state.protector_dwell_counter;
    if (state.protector_dwell_counter > config.dwell_threshold) {
      if (config.dwell_mode == DwellBonusMode::kPerTick) {
        delta += 10;
      } else if (state.dwell_bonus_armed) {
        delta += 10;
        state.dwell_bonus_armed = false;
      }
    }
  } else {
    state.protector_dwell_counter = 0;
    state.dwell_bonus_armed = true;
  }

  state.score += delta;
  return delta;
}

int referee_run(const std::vector<FencingTick>& ticks,
                const RefereeConfig& config, int horizon) {
  if (static_cast<int>(ticks.size()) > horizon)
    throw std::invalid_argument("referee_run: tick stream exceeds horizon");
  RefereeState state;
  for (const auto& tick : ticks) referee_step(state, tick, config);
  return state.score;
}

double closest_point_fraction(const BatGeometry& g) {
  if ((g.h_up - g.h_low).norm() == 0.0 || g.l_sword <= 0.0)
    throw std::invalid_argument("closest_point_fraction: degenerate bat");
  const double t =
      (g.tar - g.h_low).dot(g.h_up - g.h_low) / (2.0 * g.l_sword);
  return std::clamp(t, 0.0, 1.0);
}

Vec3 heuristic_defense_position(const BatGeometry& g, double u) {
  const double ht = closest_point_fraction(g);
  const Vec3 h_close = g.h_low + ht * (g.h_up - g.h_low);
  return g.tar + (h_close - g.tar) * u;
}

Vec3 heuristic_defense_orientation(const Vec3& bat_axis_opponent,
                                   const std::array<double, 3>& offsets) {
  const double n = bat_axis_opponent.norm();
  if (n == 0.0)
    throw std::invalid_argument(
        "heuristic_defense_orientation: zero bat axis");
  const Vec3 axis = bat_axis_opponent / n;

  // Canonical perpendicular: cross with the world axis least aligned with
  // the bat.
  int k = 0;
  axis.cwiseAbs().minCoeff(&k);
  Vec3 ref = Vec3::Zero();
  ref[k] = 1.0;
  Vec3 perp = axis.cross(ref).normalized();

  Eigen::Matrix3d rot =
      (Eigen::AngleAxisd(offsets[2], Vec3::UnitZ()) *
       Eigen::AngleAxisd(offsets[1], Vec3::UnitY()) *
       Eigen::AngleAxisd(offsets[0], Vec3::UnitX()))
          .toRotationMatrix();
  return (rot * perp).normalized();
}

}  // namespace stgame::fencing
