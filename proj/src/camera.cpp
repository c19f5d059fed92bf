#include "partaff/camera.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "partaff/error.hpp"
#include "partaff/rng.hpp"

namespace partaff {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double wrap_degrees(double a) {
    double w = std::fmod(a, 360.0);
    if (w < 0.0) w += 360.0;
    return w;
}

}  // namespace

void CameraPose::validate() const {
    if (!(radius > 0.0)) throw ValidationError("camera radius must be positive");
    if (!(fov > 0.0 && fov < 180.0)) throw ValidationError("camera fov must lie in (0, 180)");
    if (!(elevation >= -90.0 && elevation <= 90.0)) throw ValidationError("camera elevation must lie in [-90, 90]");
    if (!std::isfinite(azimuth)) throw ValidationError("camera azimuth must be finite");
}

Vec3 CameraPose::position() const {
    const double az = wrap_degrees(azimuth) * kDeg;
    const double el = elevation * kDeg;
    return look_at + radius * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

std::vector<CameraPose> sample_sphere_poses(std::size_t count, double radius, ElevationRange range,
                                            std::uint64_t seed, double fov) {
    if (count == 0) throw ValidationError("pose count must be at least 1");
    if (!(range.min_deg <= range.max_deg)) throw ValidationError("empty elevation range");
    Rng rng(seed);
    std::vector<CameraPose> poses(count);
    const double width = 360.0 / static_cast<double>(count);
    for (std::size_t k = 0; k < count; ++k) {
        auto& p = poses[k];
        p.id = static_cast<int>(k);
        p.radius = radius;
        p.fov = fov;
        p.azimuth = (static_cast<double>(k) + 0.5) * width;
        p.elevation = rng.uniform(range.min_deg, range.max_deg);
        p.validate();
    }
    return poses;
}

std::vector<Ray> rays_for(const CameraPose& pose, std::size_t resolution) {
    pose.validate();
    if (resolution == 0) throw ValidationError("resolution must be at least 1");
    const Vec3 eye = pose.position();
    const Vec3 forward = (pose.look_at - eye).normalized();
    Vec3 right = forward.cross(pose.up);
    if (right.norm() < 1e-12) right = forward.cross(Vec3::UnitY());
    right.normalize();
    const Vec3 cam_up = right.cross(forward);
    const double tan_half = std::tan(0.5 * pose.fov * kDeg);
    const double near = std::max(0.0, pose.radius - 1.0);
    const double far = pose.radius + 1.0;

    std::vector<Ray> rays;
    rays.reserve(resolution * resolution);
    const double inv = 1.0 / static_cast<double>(resolution);
    for (std::size_t i = 0; i < resolution; ++i) {
        const double v = (1.0 - (2.0 * static_cast<double>(i) + 1.0) * inv) * tan_half;
        for (std::size_t j = 0; j < resolution; ++j) {
            const double u = ((2.0 * static_cast<double>(j) + 1.0) * inv - 1.0) * tan_half;
            rays.push_back(Ray{eye, (forward + u * right + v * cam_up).normalized(), near, far});
        }
    }
    return rays;
}

}  // namespace partaff
