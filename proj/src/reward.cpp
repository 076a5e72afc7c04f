#include "graspcraft/reward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace graspcraft::reward {

namespace {

bool is_tip_point(size_t i) { return i == 4 || i == 8; }
bool is_tip_slot(size_t i) { return i == 4 || i == 7; }

}  // namespace

double r_dis(const rep::HandCentricRep& rep, const RewardWeights& w) {
  double sum = 0.0;
  for (size_t i = 0; i < rep.d.size(); ++i)
    sum += (is_tip_point(i) ? w.w_d_tip : w.w_d_other) * rep.d[i].norm2();
  return -sum;
}

double r_contact(const rep::ContactSummary& contacts,
                 const std::vector<sim::ContactRecord>& undesired, const RewardWeights& w) {
  double desired = 0.0;
  for (size_t i = 0; i < sim::kNumHandLinks; ++i) {
    if (contacts.f[i] > 0.0 && !contacts.b[i])
      throw std::invalid_argument("r_contact: summary has impulse without contact flag");
    if (contacts.b[i] && contacts.f[i] <= 0.0)
      throw std::invalid_argument("r_contact: summary has contact flag without impulse");
    if (!contacts.b[i]) continue;
    desired += (is_tip_slot(i) ? w.w_cd_tip : w.w_cd_other) +
               (is_tip_slot(i) ? w.w_fd_tip : w.w_fd_other) * contacts.f[i];
  }

  // every robot link party to an undesired contact is penalized; a
  // self-contact charges both of its links
  std::array<double, sim::kNumLinks> f_u{};
  std::array<bool, sim::kNumLinks> b_u{};
  for (const sim::ContactRecord& r : undesired) {
    if (r.classification == sim::ContactClass::Desired) continue;
    for (int body : {r.body_a, r.body_b}) {
      if (body < 0) continue;
      b_u[static_cast<size_t>(body)] = true;
      f_u[static_cast<size_t>(body)] += r.impulse;
    }
  }
  double penalty = 0.0;
  for (size_t i = 0; i < sim::kNumLinks; ++i)
    if (b_u[i]) penalty += w.w_cu + w.w_fu * f_u[i];

  return desired + (w.literal_signs ? penalty : -penalty);
}

double r_height(const std::array<double, sim::kNumLinks>& h, const RewardWeights& w) {
  double sum = 0.0;
  for (double hi : h) sum += w.w_h * std::log(std::min(std::max(hi, kHeightFloor), kHeightKnee));
  return w.literal_signs ? -sum : sum;
}

double r_reg(const Vec2& hand_linvel, double hand_angvel, const Vec2& obj_linvel,
             double obj_angvel, const Vec2& obj_disp, const std::array<double, 3>& arm_qdot,
             const RewardWeights& w) {
  double hand = hand_linvel.norm2() + hand_angvel * hand_angvel;
  double obj = obj_linvel.norm2() + obj_angvel * obj_angvel;
  double arm = 0.0;
  for (double qd : arm_qdot) arm += qd * qd;
  return -(w.w_h_reg * hand + w.w_o * obj + w.w_l * obj_disp.norm() + w.w_q * arm);
}

RewardBreakdown total_reward(const sim::WorldState& world, const rep::HandCentricRep& rep,
                             const rep::ContactSummary& contacts, const Vec2& episode_start_pos,
                             const RewardWeights& w) {
  std::vector<sim::ContactRecord> undesired;
  for (const sim::ContactRecord& r : world.contacts)
    if (r.classification != sim::ContactClass::Desired) undesired.push_back(r);

  sim::Kinematics kin = sim::forward_kinematics(world.model, world.joints.q);
  Vec2 hand_v = sim::point_velocity(kin, sim::kFirstHandLink, kin.wrist.position,
                                    world.joints.qdot);
  double hand_w = sim::link_angular_velocity(kin, sim::kFirstHandLink, world.joints.qdot);
  std::array<double, 3> arm_qdot{world.joints.qdot[0], world.joints.qdot[1],
                                 world.joints.qdot[2]};

  RewardBreakdown b;
  b.r_dis = r_dis(rep, w);
  b.r_contact = r_contact(contacts, undesired, w);
  b.r_height = r_height(
      sim::link_table_heights(world.model, world.joints.q, world.table_height), w);
  b.r_reg = r_reg(hand_v, hand_w, world.object.linvel, world.object.angvel,
                  world.object.pose.position - episode_start_pos, arm_qdot, w);
  b.total = b.r_dis + b.r_contact + b.r_height + b.r_reg;
  return b;
}

}  // namespace graspcraft::reward
