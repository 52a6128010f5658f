// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace mmloc {

using Vec3 = Eigen::Vector3d;
using cplx = std::complex<double>;

inline constexpr double kSpeedOfLight = 299792458.0;
inline constexpr double kCarrierHz = 73e9;

// Finite planar rectangle. The second in-plane axis is normal x axis.
struct Reflector {
    Vec3 plane_point = Vec3::Zero();
    Vec3 unit_normal = Vec3::UnitZ();
    Vec3 axis = Vec3::UnitX();
    double half_u = 1.0;
    double half_v = 1.0;
    double reflection_loss_db = 0.0;
};

struct Scene {
    Vec3 tx_position = Vec3::Zero();
    Vec3 rx_position = Vec3::Zero();
    std::vector<Reflector> reflectors;
    double clock_offset_s = 0.0;
    std::uint64_t rng_seed = 0;
};

struct PathRecord {
    cplx gain{0.0, 0.0};
    double toa_s = 0.0;
    Vec3 doa = Vec3::UnitX();  // from rx toward the last interaction (or tx)
    Vec3 dod = Vec3::UnitX();  // from tx toward the first interaction (or rx)
    int order = 0;
    std::vector<Vec3> interaction_points;
};

struct SceneConfig {
    Vec3 tx_position{0.0, -8.0, 6.0};
    double rx_x_min = 35.0, rx_x_max = 95.0;
    double rx_y_min = -6.0, rx_y_max = 6.0;
    double rx_z_min = 0.4, rx_z_max = 3.5;
    double wall_offset = 10.0;  // facades at y = +-wall_offset
    double setback_jitter = 0.8;
    double facade_yaw_max_deg = 6.0;  // facades rotated about the vertical by U(-max, max)
    int buildings_per_side = 5;
    double building_len_min = 15.0, building_len_max = 35.0;
    double gap_min = 0.0, gap_max = 5.0;
    double building_h_min = 8.0, building_h_max = 25.0;
    double corridor_x_start = -10.0;
    double loss_db_min = 6.0, loss_db_max = 15.0;
    double blocker_prob = 0.3;
    double clock_offset_max_s = 200e-9;
};

Vec3 mirror_point(const Vec3& p, const Reflector& r);

// Parameter t in (0,1) of the crossing of segment a->b with r's rectangle.
std::optional<double> segment_hits(const Vec3& a, const Vec3& b, const Reflector& r);

std::vector<PathRecord> trace_paths(const Scene& scene, int max_order = 2);

std::vector<double> relative_delays(const std::vector<PathRecord>& paths, double t0);
// Delays relative to the order-0 record; empty when no LOS record exists.
std::optional<std::vector<double>> los_tdoas(const std::vector<PathRecord>& paths);

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg);

bool los_blocked(const Scene& scene);

void write_scene_jsonl(std::ostream& os, const Scene& scene, const std::vector<PathRecord>& paths);

struct SceneBundle {
    Scene scene;
    std::vector<PathRecord> paths;
};
std::vector<SceneBundle> read_scene_jsonl(std::istream& is);

}  // namespace mmloc
