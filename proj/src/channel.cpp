// SPDX-License-Identifier: Apache-2.0
#include "mmloc/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mmloc/errors.hpp"

namespace mmloc {

namespace {
constexpr double kPi = std::numbers::pi;

double sinc(double x) {
    if (x == 0.0) return 1.0;
    return std::sin(kPi * x) / (kPi * x);
}
}  // namespace

Eigen::Matrix3d facing_negative_x() {
    Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
    r(0, 0) = -1.0;
    r(1, 1) = -1.0;
    return r;
}

CVec steering_factor(double s, int n_elems) {
    CVec a(n_elems);
    for (int n = 0; n < n_elems; ++n) a[n] = std::polar(1.0, -kPi * n * s);
    return a;
}

Eigen::Vector2d array_sines(const Vec3& dir, const ArrayGeometry& geom) {
    Vec3 local = geom.orientation * dir;
    return {local.y(), local.z()};
}

CVec steering_vector(const Vec3& dir, const ArrayGeometry& geom) {
    Eigen::Vector2d s = array_sines(dir, geom);
    CVec ax = steering_factor(s[0], geom.n_x);
    CVec ay = steering_factor(s[1], geom.n_y);
    CVec a(geom.size());
    for (int i = 0; i < geom.n_x; ++i)
        for (int j = 0; j < geom.n_y; ++j) a[i * geom.n_y + j] = ax[i] * ay[j];
    return a;
}

Vec3 direction_from_sines(double u, double v, const ArrayGeometry& geom) {
    double w2 = 1.0 - u * u - v * v;
    Vec3 local(w2 > 0.0 ? std::sqrt(w2) : 0.0, u, v);
    local.normalize();
    return geom.orientation.transpose() * local;
}

Vec3 unit_from_angles(double azimuth, double elevation) {
    return {std::cos(elevation) * std::cos(azimuth), std::cos(elevation) * std::sin(azimuth),
            std::sin(elevation)};
}

Eigen::Vector2d angles_from_unit(const Vec3& dir) {
    double z = std::clamp(dir.z(), -1.0, 1.0);
    return {std::atan2(dir.y(), dir.x()), std::asin(z)};
}

double raised_cosine(double t, double beta, double Ts) {
    double x = t / Ts;
    if (beta > 0.0) {
        double d = 1.0 - (2.0 * beta * x) * (2.0 * beta * x);
        if (std::abs(d) < 1e-10) return kPi / 4.0 * sinc(1.0 / (2.0 * beta));
        return sinc(x) * std::cos(kPi * beta * x) / d;
    }
    return sinc(x);
}

ChannelTaps channel_taps(const std::vector<PathRecord>& paths, double t0, const ChannelConfig& cfg) {
    const int nr = cfg.rx.size();
    const int nt = cfg.tx.size();
    ChannelTaps out;
    out.taps.assign(cfg.n_d, CMat::Zero(nr, nt));
    const double window = (cfg.n_d - 1) * cfg.ts;
    for (const auto& p : paths) {
        double tau = p.toa_s - t0;
        if (tau < 0.0 || tau >= window)
            throw DelayOverflow("relative delay " + std::to_string(tau) + " s outside tap window");
        CMat outer = steering_vector(p.doa, cfg.rx) * steering_vector(p.dod, cfg.tx).adjoint();
        for (int n = 0; n < cfg.n_d; ++n) {
            double t = n * cfg.ts - tau;
            if (std::abs(t) > cfg.pulse_span * cfg.ts) continue;
            double f = raised_cosine(t, cfg.beta, cfg.ts);
            if (f != 0.0) out.taps[n] += (p.gain * f) * outer;
        }
    }
    return out;
}

}  // namespace mmloc
