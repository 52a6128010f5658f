// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmloc/recovery.hpp"

namespace mmloc {

enum class Mode { LOS, NLOS, UNLOCATABLE };
const char* mode_name(Mode m);

struct QualifyConfig {
    double los_gap_db = 30.0;     // max power gap between LOS and strongest first-order path
    double nlos_atten_db = 40.0;  // first-order paths kept within this of the strongest path
    int nlos_min_paths = 3;
};

struct QualifiedChannel {
    Mode mode = Mode::UNLOCATABLE;
    std::optional<EstimatedPath> los_path;
    std::vector<EstimatedPath> first_order;  // strongest first
};

// Uses EstimatedPath::predicted_class.
QualifiedChannel qualify(const std::vector<EstimatedPath>& paths, const QualifyConfig& cfg = {});

struct LocationEstimate {
    Vec3 x_hat = Vec3::Zero();
    std::optional<double> d0_hat;
    std::vector<int> combo;  // indices into the first-order list
    double residual = 0.0;
    Mode mode = Mode::UNLOCATABLE;
};

// tdoa_s of every reflection is taken relative to the LOS tdoa.
LocationEstimate locate_los(const EstimatedPath& los, const std::vector<EstimatedPath>& refl, const Vec3& x_t,
                            double eps = 1e-9);

// Delta d = c * tdoa_s for every reflection.
LocationEstimate locate_nlos(const std::vector<EstimatedPath>& refl, const Vec3& x_t, double max_cond = 1e12);

// (theta + phi)(theta + phi)^T / |theta + phi|^2
Eigen::Matrix3d reflection_projector(const Vec3& doa, const Vec3& dod);

std::vector<Vec3> reflection_points(const Vec3& x_hat, double d0_hat, const std::vector<EstimatedPath>& paths,
                                    const Vec3& x_t);

struct LocateOptions {
    double z_min = 0.0;
    double z_max = 4.0;
    int nlos_cap = 35;
};

LocationEstimate locate(const QualifiedChannel& q, const Vec3& x_t, const LocateOptions& opts = {});

}  // namespace mmloc
