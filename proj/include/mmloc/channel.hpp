// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <vector>

#include "mmloc/scene.hpp"

namespace mmloc {

using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

// Uniform planar array in its local yz-plane, half-wavelength spacing.
// orientation maps global directions into the local frame (broadside = local +x).
struct ArrayGeometry {
    int n_x = 1;
    int n_y = 1;
    Eigen::Matrix3d orientation = Eigen::Matrix3d::Identity();

    int size() const { return n_x * n_y; }
};

// Array facing the global -x direction.
Eigen::Matrix3d facing_negative_x();

// [e^{-j pi n s}], n = 0..n_elems-1
CVec steering_factor(double s, int n_elems);

CVec steering_vector(const Vec3& dir, const ArrayGeometry& geom);

// (u, v) = (cos el sin az, sin el) in the array frame.
Eigen::Vector2d array_sines(const Vec3& dir, const ArrayGeometry& geom);

// Front-hemisphere direction with the given sines, returned in global coordinates.
Vec3 direction_from_sines(double u, double v, const ArrayGeometry& geom);

Vec3 unit_from_angles(double azimuth, double elevation);
Eigen::Vector2d angles_from_unit(const Vec3& dir);  // (azimuth, elevation)

double raised_cosine(double t, double beta, double Ts);

struct ChannelConfig {
    ArrayGeometry tx{8, 8};
    ArrayGeometry rx{4, 4, facing_negative_x()};
    int n_d = 32;
    double ts = 1e-9;
    double beta = 0.4;
    int pulse_span = 8;  // pulse truncated to +-pulse_span * ts
};

struct ChannelTaps {
    std::vector<CMat> taps;  // n_d matrices, each rx.size() x tx.size()
};

ChannelTaps channel_taps(const std::vector<PathRecord>& paths, double t0, const ChannelConfig& cfg);

}  // namespace mmloc
