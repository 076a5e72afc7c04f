#include "doctest.h"
#include "graspcraft/handrep.hpp"

#include <cmath>
#include <fstream>
#include <vector>

#include "json.hpp"

using namespace graspcraft;
using namespace graspcraft::geom2d;
using namespace graspcraft::rep;

namespace {

constexpr double kPi = 3.14159265358979323846;

Polygon square(double side) {
  double h = side / 2.0;
  return Polygon::from_vertices({{-h, -h}, {h, -h}, {h, h}, {-h, h}}, 0.7, 0.1);
}

std::array<Vec2, sim::kNumJointPoints> spread_points() {
  std::array<Vec2, sim::kNumJointPoints> pts;
  for (int i = 0; i < sim::kNumJointPoints; ++i)
    pts[static_cast<size_t>(i)] = Vec2{0.1 * i, 0.05 * (i % 3)};
  return pts;
}

}  // namespace

TEST_CASE("distance_vectors single point cloud") {
  PointCloud cloud;
  cloud.points = {{1.0, 0.0}};
  std::array<Vec2, sim::kNumJointPoints> pts{};
  HandCentricRep rep = distance_vectors(pts, cloud);
  for (const Vec2& d : rep.d) {
    CHECK(d.x == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(d.y == doctest::Approx(0.0).epsilon(1e-15));
  }
}

TEST_CASE("distance_vectors zero offset at coincidence") {
  PointCloud cloud;
  cloud.points = {{0.3, 0.0}, {0.0, 0.0}};
  auto pts = spread_points();
  pts[4] = Vec2{0.3, 0.0};
  HandCentricRep rep = distance_vectors(pts, cloud);
  CHECK(rep.d[4].x == 0.0);
  CHECK(rep.d[4].y == 0.0);
}

TEST_CASE("distance_vectors empty cloud throws") {
  PointCloud cloud;
  CHECK_THROWS_AS(distance_vectors(spread_points(), cloud), std::invalid_argument);
}

TEST_CASE("distance_vectors matches brute-force scan") {
  Rng rng(404);
  for (int trial = 0; trial < 50; ++trial) {
    PointCloud cloud;
    int n = 5 + rng.uniform_int(200);
    for (int i = 0; i < n; ++i)
      cloud.points.push_back({rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)});
    std::array<Vec2, sim::kNumJointPoints> pts;
    for (auto& p : pts) p = Vec2{rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6)};
    HandCentricRep rep = distance_vectors(pts, cloud);
    for (size_t i = 0; i < pts.size(); ++i) {
      int best = 0;
      double best_d = (cloud.points[0] - pts[i]).norm2();
      for (int k = 1; k < n; ++k) {
        double d = (cloud.points[static_cast<size_t>(k)] - pts[i]).norm2();
        if (d < best_d) {
          best = k;
          best_d = d;
        }
      }
      Vec2 expect = cloud.points[static_cast<size_t>(best)] - pts[i];
      CHECK(rep.d[i].x == expect.x);
      CHECK(rep.d[i].y == expect.y);
    }
  }
}

TEST_CASE("representation depends only on the nearest points") {
  Rng rng(405);
  PointCloud cloud;
  for (int i = 0; i < 60; ++i)
    cloud.points.push_back({rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)});
  auto pts = spread_points();
  HandCentricRep base = distance_vectors(pts, cloud);

  // move every non-nearest point further out; d must not change
  PointCloud far = cloud;
  for (size_t k = 0; k < far.points.size(); ++k) {
    bool is_nearest = false;
    for (size_t i = 0; i < pts.size(); ++i) {
      Vec2 nearest = pts[i] + base.d[i];
      if ((far.points[k] - nearest).norm() < 1e-12) is_nearest = true;
    }
    if (!is_nearest) far.points[k] = far.points[k] + Vec2{5.0, 5.0};
  }
  HandCentricRep moved = distance_vectors(pts, far);
  for (size_t i = 0; i < pts.size(); ++i) {
    CHECK(moved.d[i].x == base.d[i].x);
    CHECK(moved.d[i].y == base.d[i].y);
  }
}

TEST_CASE("extract_features tracking error") {
  RobotModel model = RobotModel::standard();
  Joint9 q{0.2, -0.3, 0.1, 0.4, 0.2, 0.1, 0.3, 0.2, 0.1};
  PointCloud cloud = sample_boundary(square(0.06), Pose2{{0.4, 0.05}, 0.2}, 24);
  FeatureSet fs = extract_features(model, q, q, cloud, 0.0);
  for (double v : fs.dq) CHECK(v == 0.0);

  Joint9 a_prev = q;
  a_prev[2] -= 0.05;
  fs = extract_features(model, a_prev, q, cloud, 0.0);
  CHECK(fs.dq[2] == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("extract_features translation equivariance of d") {
  Vec2 shift{0.13, 0.07};
  RobotModel model = RobotModel::standard();
  RobotModel shifted = model;
  shifted.base += shift;
  Joint9 q{0.1, -0.4, 0.3, 0.2, 0.5, 0.1, 0.4, 0.2, 0.3};

  PointCloud cloud = sample_boundary(square(0.05), Pose2{{0.35, 0.04}, 0.5}, 32);
  PointCloud moved = cloud;
  for (Vec2& p : moved.points) p += shift;

  FeatureSet a = extract_features(model, q, q, cloud, 0.0);
  FeatureSet b = extract_features(shifted, q, q, moved, 0.0);
  for (size_t i = 0; i < a.d.d.size(); ++i) {
    CHECK(b.d.d[i].x == doctest::Approx(a.d.d[i].x).epsilon(1e-12));
    CHECK(b.d.d[i].y == doctest::Approx(a.d.d[i].y).epsilon(1e-12));
  }
}

TEST_CASE("extract_features matches golden snapshot") {
  std::ifstream in(std::string(GRASPCRAFT_FIXTURE_DIR) + "/features/snapshot.json");
  REQUIRE(in.good());
  nlohmann::json fix = nlohmann::json::parse(in);

  Joint9 q, a_prev;
  for (size_t j = 0; j < sim::kNumJoints; ++j) {
    q[j] = fix["q"][j];
    a_prev[j] = fix["a_prev"][j];
  }
  PointCloud cloud;
  for (const auto& p : fix["cloud"]) cloud.points.push_back({p[0], p[1]});

  FeatureSet fs = extract_features(RobotModel::standard(), a_prev, q, cloud,
                                   fix["table_height"]);
  const auto& exp = fix["expected"];
  for (size_t i = 0; i < sim::kNumJointPoints; ++i) {
    CHECK(fs.d.d[i].x == doctest::Approx(double(exp["d"][i][0])).epsilon(1e-12));
    CHECK(fs.d.d[i].y == doctest::Approx(double(exp["d"][i][1])).epsilon(1e-12));
  }
  for (size_t i = 0; i < sim::kNumLinks; ++i)
    CHECK(fs.h[i] == doctest::Approx(double(exp["h"][i])).epsilon(1e-12));
  CHECK(fs.T.position.x == doctest::Approx(double(exp["T"][0])).epsilon(1e-12));
  CHECK(fs.T.position.y == doctest::Approx(double(exp["T"][1])).epsilon(1e-12));
  CHECK(fs.T.angle == doctest::Approx(double(exp["T"][2])).epsilon(1e-12));
  for (size_t j = 0; j < sim::kNumJoints; ++j)
    CHECK(fs.dq[j] == doctest::Approx(double(exp["dq"][j])).epsilon(1e-12));
}

TEST_CASE("summarize_contacts aggregates desired impulses per hand link") {
  std::vector<sim::ContactRecord> records;
  Vec2 n{0.0, 1.0};
  records.push_back({sim::kBodyObject, 7, {0, 0}, n, 0.02, sim::ContactClass::Desired});
  records.push_back({sim::kBodyObject, 7, {0, 0}, n, 0.03, sim::ContactClass::Desired});
  records.push_back({sim::kBodyObject, 4, {0, 0}, n, 0.01, sim::ContactClass::Desired});
  // non-desired records must not leak into the summary
  records.push_back({5, 8, {0, 0}, n, 0.5, sim::ContactClass::UndesiredSelf});
  records.push_back({sim::kBodyTable, 7, {0, 0}, n, 0.5, sim::ContactClass::UndesiredTable});
  records.push_back({sim::kBodyObject, 1, {0, 0}, n, 0.5, sim::ContactClass::UndesiredArmObject});

  ContactSummary s = summarize_contacts(records);
  CHECK(s.f[7 - sim::kFirstHandLink] == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(s.f[4 - sim::kFirstHandLink] == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(s.b[7 - sim::kFirstHandLink]);
  CHECK(s.b[4 - sim::kFirstHandLink]);
  int on = 0;
  for (size_t i = 0; i < sim::kNumHandLinks; ++i) {
    if (s.b[i]) ++on;
    CHECK((s.f[i] > 0.0) == s.b[i]);
  }
  CHECK(on == 2);
}

TEST_CASE("observation layout is fixed and 75-dimensional") {
  static_assert(kObsDim == 75);
  static_assert(kObsF + sim::kNumHandLinks == kObsDim);
  static_assert(kObsB + sim::kNumHandLinks == kObsF);
  static_assert(kObsDq + sim::kNumJoints == kObsB);
  static_assert(kObsT + 3 == kObsDq);
  static_assert(kObsH + sim::kNumLinks == kObsT);
  static_assert(kObsD + 2 * sim::kNumJointPoints == kObsH);

  Observation obs;
  CHECK(obs.v.size() == 75);
}

TEST_CASE("teacher and student observations differ only in d and contact blocks") {
  RobotModel model = RobotModel::standard();
  Joint9 q{0.1, -0.5, 0.4, 0.3, 0.4, 0.2, 0.3, 0.4, 0.2};
  Polygon box = square(0.06);
  Pose2 pose{{0.40, 0.03}, 0.3};
  PointCloud full = sample_boundary(box, pose, 64);
  PointCloud view = visible_points(full, box, pose, Vec2{0.40, 1.0});

  ContactSummary gt;
  gt.f[4] = 0.03;
  gt.b[4] = true;
  ContactSlot gt_slot = ContactSlot::from(gt);
  ContactSlot recon;
  recon.b[4] = 0.8;
  recon.f[4] = 0.025;

  Observation teacher =
      assemble_observation(ObsKind::Teacher, q, q, full, gt_slot, model, 0.0);
  Observation student =
      assemble_observation(ObsKind::Student, q, q, view, recon, model, 0.0);

  for (int i = 0; i < kObsDim; ++i) {
    bool d_block = i >= kObsD && i < kObsD + 18;
    bool contact_block = i >= kObsB;
    if (!d_block && !contact_block)
      CHECK(teacher.v[static_cast<size_t>(i)] == student.v[static_cast<size_t>(i)]);
  }
  CHECK(teacher.v[kObsB + 4] == 1.0);
  CHECK(student.v[kObsB + 4] == 0.8);
}

TEST_CASE("empty contacts leave the contact block zero") {
  RobotModel model = RobotModel::standard();
  Joint9 q{};
  PointCloud cloud = sample_boundary(square(0.08), Pose2{{0.5, 0.04}, 0.0}, 16);
  Observation obs = assemble_observation(ObsKind::Teacher, q, q, cloud, ContactSlot{}, model, 0.0);
  for (int i = kObsB; i < kObsDim; ++i) CHECK(obs.v[static_cast<size_t>(i)] == 0.0);
}

TEST_CASE("normalization round-trips") {
  RobotModel model = RobotModel::standard();
  Joint9 q{0.3, -0.6, 0.7, 0.1, 0.9, 0.3, 0.2, 0.5, 0.8};
  Joint9 a_prev{0.2, -0.4, 0.6, 0.0, 0.8, 0.2, 0.1, 0.4, 0.7};
  PointCloud cloud = sample_boundary(square(0.06), Pose2{{0.35, 0.03}, 0.4}, 24);
  ContactSummary gt;
  gt.f[2] = 0.0371;
  gt.b[2] = true;
  Observation obs = assemble_observation(ObsKind::Teacher, a_prev, q, cloud,
                                         ContactSlot::from(gt), model, 0.0);

  FeatureSet fs = extract_features(model, a_prev, q, cloud, 0.0);
  for (size_t j = 0; j < sim::kNumJoints; ++j) {
    CHECK(obs.v[kObsQ + j] * kAngleScale == doctest::Approx(q[j]).epsilon(1e-12));
    CHECK(obs.v[kObsAPrev + j] * kAngleScale == doctest::Approx(a_prev[j]).epsilon(1e-12));
    CHECK(obs.v[kObsDq + j] * kAngleScale == doctest::Approx(fs.dq[j]).epsilon(1e-12));
  }
  for (size_t i = 0; i < sim::kNumJointPoints; ++i) {
    CHECK(obs.v[kObsD + 2 * i] * kDistScale == doctest::Approx(fs.d.d[i].x).epsilon(1e-12));
    CHECK(obs.v[kObsD + 2 * i + 1] * kDistScale == doctest::Approx(fs.d.d[i].y).epsilon(1e-12));
  }
  for (size_t i = 0; i < sim::kNumLinks; ++i)
    CHECK(obs.v[kObsH + i] * kDistScale == doctest::Approx(fs.h[i]).epsilon(1e-12));
  CHECK(obs.v[kObsT + 0] * kDistScale == doctest::Approx(fs.T.position.x).epsilon(1e-12));
  CHECK(obs.v[kObsT + 2] * kAngleScale == doctest::Approx(fs.T.angle).epsilon(1e-12));
  CHECK(obs.v[kObsF + 2] * kImpulseScale == doctest::Approx(0.0371).epsilon(1e-12));
}

TEST_CASE("cloud tag must match observation kind") {
  RobotModel model = RobotModel::standard();
  Joint9 q{};
  Polygon box = square(0.06);
  Pose2 pose{{0.4, 0.03}, 0.0};
  PointCloud full = sample_boundary(box, pose, 32);
  PointCloud view = visible_points(full, box, pose, Vec2{0.4, 1.0});

  CHECK_THROWS_AS(assemble_observation(ObsKind::Teacher, q, q, view, ContactSlot{}, model, 0.0),
                  std::invalid_argument);
  CHECK_THROWS_AS(assemble_observation(ObsKind::Student, q, q, full, ContactSlot{}, model, 0.0),
                  std::invalid_argument);
}

TEST_CASE("inject_noise bounds and determinism") {
  Joint9 q{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

  Rng zero_rng(9);
  Joint9 same = inject_noise(q, NoiseModel::none(), zero_rng);
  for (size_t j = 0; j < sim::kNumJoints; ++j) CHECK(same[j] == q[j]);

  NoiseModel noise;
  Rng rng(10);
  double arm_max = 0.0, hand_max = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Joint9 s = inject_noise(q, noise, rng);
    for (size_t j = 0; j < 3; ++j) arm_max = std::max(arm_max, std::abs(s[j] - q[j]));
    for (size_t j = 3; j < sim::kNumJoints; ++j)
      hand_max = std::max(hand_max, std::abs(s[j] - q[j]));
  }
  CHECK(arm_max <= 0.005);
  CHECK(hand_max <= 0.02);
  // bounds should be exercised, not just respected
  CHECK(arm_max > 0.004);
  CHECK(hand_max > 0.016);

  Rng r1(77), r2(77);
  for (int i = 0; i < 10; ++i) {
    Joint9 s1 = inject_noise(q, noise, r1);
    Joint9 s2 = inject_noise(q, noise, r2);
    for (size_t j = 0; j < sim::kNumJoints; ++j) CHECK(s1[j] == s2[j]);
  }
}

TEST_CASE("perturb_pose stays within link noise bounds") {
  NoiseModel noise;
  Pose2 pose{{0.4, 0.2}, 0.5};
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    Pose2 p = perturb_pose(pose, noise, rng);
    CHECK(std::abs(p.position.x - pose.position.x) <= noise.link_pos_noise);
    CHECK(std::abs(p.position.y - pose.position.y) <= noise.link_pos_noise);
    CHECK(std::abs(p.angle - pose.angle) <= noise.link_rot_noise);
  }
}

TEST_CASE("single-view offsets are never shorter than full-cloud offsets") {
  Rng rng(406);
  for (int trial = 0; trial < 20; ++trial) {
    Polygon poly = random_convex_polygon(rng, SizeClass::Medium);
    Pose2 pose{{rng.uniform(0.3, 0.5), rng.uniform(0.02, 0.08)}, rng.uniform(-kPi, kPi)};
    PointCloud full = sample_boundary(poly, pose, 80);
    PointCloud view = visible_points(full, poly, pose, Vec2{pose.position.x, 1.5});

    Joint9 q{0.1, -0.5, 0.3, 0.2, 0.4, 0.2, 0.2, 0.4, 0.2};
    sim::Kinematics kin = sim::forward_kinematics(RobotModel::standard(), q);
    HandCentricRep df = distance_vectors(kin.joint_points, full);
    HandCentricRep dv = distance_vectors(kin.joint_points, view);
    for (size_t i = 0; i < sim::kNumJointPoints; ++i)
      CHECK(dv.d[i].norm() >= df.d[i].norm() - 1e-15);
  }
}
