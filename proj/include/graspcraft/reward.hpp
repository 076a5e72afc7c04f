#pragma once

#include <array>
#include <vector>

#include "graspcraft/handrep.hpp"
#include "graspcraft/simworld.hpp"

namespace graspcraft::reward {

using geom2d::Pose2;
using geom2d::Vec2;

// All weights are stored as positive magnitudes; the term formulas own the
// signs so that every term penalizes what it is meant to penalize. The
// literal_signs flag instead applies the source table's negative entries
// verbatim, which flips the undesired-contact and height terms into rewards;
// it exists only to study that reading.
struct RewardWeights {
  double w_d_tip = 2.0;
  double w_d_other = 0.5;
  double w_cd_tip = 6.0;
  double w_cd_other = 1.5;
  double w_fd_tip = 4.0;
  double w_fd_other = 1.0;
  double w_cu = 1.0;
  double w_fu = 0.5;
  double w_h = 0.05;
  double w_h_reg = 1.0;
  double w_o = 15.0;
  double w_l = 5.0;
  double w_q = 1.0;
  bool literal_signs = false;
};

struct RewardBreakdown {
  double r_dis = 0.0;
  double r_contact = 0.0;
  double r_height = 0.0;
  double r_reg = 0.0;
  double total = 0.0;
};

// fingertip entries: joint points 4 and 8, hand-link slots 4 and 7
constexpr double kHeightKnee = 0.02;   // m; contributions plateau above this
constexpr double kHeightFloor = 1e-4;  // m; bounds the logarithm in penetration

double r_dis(const rep::HandCentricRep& rep, const RewardWeights& w);

double r_contact(const rep::ContactSummary& contacts,
                 const std::vector<sim::ContactRecord>& undesired, const RewardWeights& w);

double r_height(const std::array<double, sim::kNumLinks>& h, const RewardWeights& w);

double r_reg(const Vec2& hand_linvel, double hand_angvel, const Vec2& obj_linvel,
             double obj_angvel, const Vec2& obj_disp, const std::array<double, 3>& arm_qdot,
             const RewardWeights& w);

// Object displacement is measured from the episode-start position, which the
// caller carries.
RewardBreakdown total_reward(const sim::WorldState& world, const rep::HandCentricRep& rep,
                             const rep::ContactSummary& contacts, const Vec2& episode_start_pos,
                             const RewardWeights& w);

}  // namespace graspcraft::reward
