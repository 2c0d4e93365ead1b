#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <vector>

namespace stgame::fencing {

using Vec3 = Eigen::Vector3d;

// One referee observation: where the bats are relative to the target area.
struct FencingTick {
  bool bat_a_in_target = false;
  bool bats_contact = false;
  bool bat_p_in_target = false;
};

// The protector dwell bonus fires after the counter exceeds 200 consecutive
// in-target ticks. kOncePerStay awards +10 a single time per consecutive
// stay; kPerTick awards +10 on every tick past the threshold.
enum class DwellBonusMode { kOncePerStay, kPerTick };

struct RefereeState {
  int score = 0;
  int protector_dwell_counter = 0;
  bool dwell_bonus_armed = true;
};

struct RefereeConfig {
  DwellBonusMode dwell_mode = DwellBonusMode::kOncePerStay;
  int dwell_threshold = 200;
};

// Advances the scoring state machine by one tick; returns the score delta.
int referee_step(RefereeState& state, const FencingTick& tick,
                 const RefereeConfig& config = {});

// Left-fold of referee_step from the zero state.
int referee_run(const std::vector<FencingTick>& ticks,
                const RefereeConfig& config = {}, int horizon = 1000);

// Opponent bat geometry relative to the target area. The bat spans
// [h_low, h_up] and has nominal length 2 * l_sword.
struct BatGeometry {
  Vec3 tar = Vec3::Zero();
  Vec3 h_up = Vec3::Zero();
  Vec3 h_low = Vec3::Zero();
  double l_sword = 0.0;
};

// Fraction along the bat of the point closest to the target center:
//   ht = clamp01((tar - h_low) . (h_up - h_low) / (2 l_sword)).
double closest_point_fraction(const BatGeometry& g);

// Defensive bat position between the target center and the closest point of
// the opponent's bat: b_p = tar + (h_close - tar) * u, u in [0.5, 1].
Vec3 heuristic_defense_position(const BatGeometry& g, double u);

// Unit vector perpendicular to the opponent's bat axis, then rotated by the
// given x/y/z angular offsets (radians, applied as Rz * Ry * Rx).
Vec3 heuristic_defense_orientation(const Vec3& bat_axis_opponent,
                                   const std::array<double, 3>& offsets);

}  // namespace stgame::fencing
