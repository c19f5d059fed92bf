#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>
#include <set>

#include "partaff/camera.hpp"
#include "partaff/error.hpp"

using namespace partaff;

namespace {
constexpr double kDeg = std::numbers::pi / 180.0;
}

TEST(Camera, DefaultViewCountGivesDistinctPoses) {
    const auto poses = sample_sphere_poses(76, kDefaultRadius, {}, 0);
    ASSERT_EQ(poses.size(), 76u);
    std::set<std::pair<double, double>> seen;
    for (const auto& p : poses) {
        seen.insert({p.azimuth, p.elevation});
        EXPECT_GE(p.elevation, -10.0);
        EXPECT_LE(p.elevation, 45.0);
        EXPECT_GE(p.azimuth, 0.0);
        EXPECT_LT(p.azimuth, 360.0);
    }
    EXPECT_EQ(seen.size(), 76u);
}

TEST(Camera, AzimuthsAreStratumMidpoints) {
    const auto poses = sample_sphere_poses(8, 2.0, {0, 30}, 4);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(poses[k].azimuth, 45.0 * (static_cast<double>(k) + 0.5));
    const auto one = sample_sphere_poses(1, 2.0, {0, 30}, 4);
    EXPECT_DOUBLE_EQ(one[0].azimuth, 180.0);
    EXPECT_EQ(one[0].elevation, sample_sphere_poses(1, 2.0, {0, 30}, 4)[0].elevation);
}

TEST(Camera, SameSeedSamePoses) {
    const auto a = sample_sphere_poses(8, kDefaultRadius, {}, 7);
    const auto b = sample_sphere_poses(8, kDefaultRadius, {}, 7);
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_EQ(a[k].azimuth, b[k].azimuth);
        EXPECT_EQ(a[k].elevation, b[k].elevation);
    }
}

TEST(Camera, InvalidInputs) {
    EXPECT_THROW(sample_sphere_poses(0, 1.0, {}, 0), ValidationError);
    EXPECT_THROW(sample_sphere_poses(4, 1.0, {20, 10}, 0), ValidationError);
    CameraPose p;
    p.radius = 0.0;
    EXPECT_THROW(p.validate(), ValidationError);
    p.radius = 1.0;
    p.fov = 180.0;
    EXPECT_THROW(p.validate(), ValidationError);
    p.fov = 40.0;
    p.elevation = 91.0;
    EXPECT_THROW(p.validate(), ValidationError);
}

TEST(Camera, SingleRayPointsAtTarget) {
    CameraPose p;
    p.azimuth = 33.0;
    p.elevation = 12.0;
    p.look_at = Vec3(0.1, -0.2, 0.3);
    const auto rays = rays_for(p, 1);
    ASSERT_EQ(rays.size(), 1u);
    const Vec3 expected = (p.look_at - p.position()).normalized();
    EXPECT_LT((rays[0].direction - expected).norm(), 1e-12);
}

TEST(Camera, CenterRayPassesThroughLookAt) {
    CameraPose p;
    p.azimuth = 200.0;
    p.elevation = -7.0;
    p.look_at = Vec3(0.2, 0.1, -0.1);
    const auto rays = rays_for(p, 5);
    const auto& c = rays[12];
    const Vec3 to = p.look_at - c.origin;
    const double dist = (to - to.dot(c.direction) * c.direction).norm();
    EXPECT_LT(dist, 1e-6);
}

TEST(Camera, GridSizeAndUnitDirections) {
    CameraPose p;
    const auto rays = rays_for(p, 64);
    ASSERT_EQ(rays.size(), 64u * 64u);
    for (const auto& r : rays) {
        EXPECT_NEAR(r.direction.norm(), 1.0, 1e-9);
        EXPECT_GE(r.near, 0.0);
        EXPECT_LT(r.near, r.far);
    }
}

TEST(Camera, CornerRayAngleMatchesPinholeGeometry) {
    for (std::size_t res : {1u, 2u, 7u, 64u}) {
        CameraPose p;
        p.azimuth = 71.0;
        p.elevation = 25.0;
        p.fov = 50.0;
        const auto rays = rays_for(p, res);
        const Vec3 forward = (p.look_at - p.position()).normalized();
        // Corner pixel centre sits (1 - 1/res) of the half-extent away on
        // both image axes, i.e. sqrt(2) times that along the diagonal.
        const double off = (1.0 - 1.0 / static_cast<double>(res)) * std::tan(0.5 * p.fov * kDeg);
        const double expected = std::atan(std::sqrt(2.0) * off);
        for (std::size_t corner : {std::size_t{0}, res - 1, res * (res - 1), res * res - 1}) {
            const double angle = std::acos(std::clamp(rays[corner].direction.dot(forward), -1.0, 1.0));
            EXPECT_NEAR(angle, expected, 1e-6) << "res " << res;
        }
    }
}

TEST(Camera, TopRowLooksUp) {
    CameraPose p;
    const auto rays = rays_for(p, 4);
    EXPECT_GT(rays[0].direction.z(), rays[15].direction.z());
}

TEST(Camera, FullTurnIsBitIdentical) {
    for (double az : {0.0, 37.5, 181.25, 359.75}) {
        CameraPose a, b;
        a.azimuth = az;
        b.azimuth = az + 360.0;
        a.elevation = b.elevation = 17.0;
        const auto ra = rays_for(a, 9);
        const auto rb = rays_for(b, 9);
        for (std::size_t k = 0; k < ra.size(); ++k) {
            for (int c = 0; c < 3; ++c) {
                EXPECT_EQ(ra[k].direction[c], rb[k].direction[c]);
                EXPECT_EQ(ra[k].origin[c], rb[k].origin[c]);
            }
        }
    }
}

TEST(Camera, AzimuthShiftRotatesAboutUp) {
    CameraPose a, b;
    a.azimuth = 20.0;
    a.elevation = b.elevation = 30.0;
    const double delta = 73.0;
    b.azimuth = a.azimuth + delta;
    const Eigen::Matrix3d rot = Eigen::AngleAxisd(delta * kDeg, Vec3::UnitZ()).toRotationMatrix();
    const auto ra = rays_for(a, 8);
    const auto rb = rays_for(b, 8);
    for (std::size_t k = 0; k < ra.size(); ++k) {
        EXPECT_LT((rot * ra[k].direction - rb[k].direction).norm(), 1e-9);
        EXPECT_LT((rot * ra[k].origin - rb[k].origin).norm(), 1e-9);
    }
}

TEST(Camera, PoleFallsBackToAnotherUpVector) {
    CameraPose p;
    p.elevation = 90.0;
    const auto rays = rays_for(p, 3);
    for (const auto& r : rays) EXPECT_TRUE(r.direction.allFinite());
}
