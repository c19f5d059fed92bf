#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

namespace partaff {

using Vec3 = Eigen::Vector3d;

/// Look-at pinhole camera on a sphere around `look_at`. Angles in degrees;
/// `fov` is the vertical field of view.
struct CameraPose {
    int id = 0;
    double radius = 2.5;
    double elevation = 0.0;
    double azimuth = 0.0;
    double fov = 40.0;
    Vec3 look_at = Vec3::Zero();
    Vec3 up = Vec3::UnitZ();

    /// Throws ValidationError on radius <= 0, fov outside (0, 180) or
    /// elevation outside [-90, 90].
    void validate() const;
    Vec3 position() const;
};

struct Ray {
    Vec3 origin;
    Vec3 direction;
    double near = 0.0;
    double far = 1.0;
};

struct ElevationRange {
    double min_deg = -10.0;
    double max_deg = 45.0;
};

inline constexpr double kDefaultRadius = 2.5;
inline constexpr double kDefaultFov = 40.0;

/// Azimuths are stratum midpoints over [0, 360); elevations are drawn
/// uniformly from `range` with the given seed. Pose ids are 0..count-1.
std::vector<CameraPose> sample_sphere_poses(std::size_t count, double radius, ElevationRange range,
                                            std::uint64_t seed, double fov = kDefaultFov);

/// Row-major grid of `resolution`^2 rays through pixel centres. Row 0 is the
/// top of the image. near/far bracket a unit-bounded scene.
std::vector<Ray> rays_for(const CameraPose& pose, std::size_t resolution);

}  // namespace partaff
