// SPDX-License-Identifier: Apache-2.0
#include "mmloc/geoloc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmloc/classifier.hpp"
#include "mmloc/errors.hpp"

namespace mmloc {

namespace {

double power_db(const EstimatedPath& p) { return 20.0 * std::log10(std::max(p.gain_mag, 1e-300)); }

double clamped_angle(const Vec3& a, const Vec3& b) { return std::acos(std::clamp(a.dot(b), -1.0, 1.0)); }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::LOS: return "LOS";
        case Mode::NLOS: return "NLOS";
        case Mode::UNLOCATABLE: return "UNLOCATABLE";
    }
    return "?";
}

QualifiedChannel qualify(const std::vector<EstimatedPath>& paths, const QualifyConfig& cfg) {
    QualifiedChannel q;
    if (paths.empty()) return q;
    double strongest = -1e300;
    for (const auto& p : paths) strongest = std::max(strongest, power_db(p));

    const EstimatedPath* los = nullptr;
    std::vector<EstimatedPath> first;
    for (const auto& p : paths) {
        if (p.predicted_class == kClassLos && (!los || p.gain_mag > los->gain_mag)) los = &p;
        if (p.predicted_class == kClassFirst) first.push_back(p);
    }
    std::stable_sort(first.begin(), first.end(),
                     [](const EstimatedPath& a, const EstimatedPath& b) { return a.gain_mag > b.gain_mag; });

    if (los) {
        std::vector<EstimatedPath> kept;
        for (const auto& f : first)
            if (power_db(*los) - power_db(f) <= cfg.los_gap_db) kept.push_back(f);
        if (!kept.empty()) {
            q.mode = Mode::LOS;
            q.los_path = *los;
            q.first_order = std::move(kept);
        }
        return q;
    }
    std::vector<EstimatedPath> kept;
    for (const auto& f : first)
        if (strongest - power_db(f) < cfg.nlos_atten_db) kept.push_back(f);
    if (static_cast<int>(kept.size()) >= cfg.nlos_min_paths) {
        q.mode = Mode::NLOS;
        q.first_order = std::move(kept);
    }
    return q;
}

LocationEstimate locate_los(const EstimatedPath& los, const std::vector<EstimatedPath>& refl, const Vec3& x_t,
                            double eps) {
    if (refl.empty()) throw DegenerateGeometry("LOS solver needs at least one reflection");
    double num = 0.0, den2 = 0.0;
    std::vector<double> per;
    for (const auto& r : refl) {
        double th = clamped_angle(los.doa, r.doa);
        double ph = clamped_angle(los.dod, r.dod);
        double s = std::sin(th + ph);
        double den = std::sin(th) + std::sin(ph) - s;
        double ct = kSpeedOfLight * (r.tdoa_s - los.tdoa_s);
        num += ct * s * den;
        den2 += den * den;
        if (den > eps) per.push_back(ct * s / den);
    }
    if (per.empty()) throw DegenerateGeometry("every reflection is collinear with the LOS path");
    LocationEstimate e;
    e.mode = Mode::LOS;
    double d = num / den2;
    e.x_hat = x_t + d * los.dod;
    double mean = 0.0;
    for (double v : per) mean += v;
    mean /= static_cast<double>(per.size());
    double var = 0.0;
    for (double v : per) var += (v - mean) * (v - mean);
    e.residual = std::sqrt(var / static_cast<double>(per.size()));
    for (int i = 0; i < static_cast<int>(refl.size()); ++i) e.combo.push_back(i);
    return e;
}

Eigen::Matrix3d reflection_projector(const Vec3& doa, const Vec3& dod) {
    Vec3 s = doa + dod;
    double n2 = s.squaredNorm();
    if (!(n2 > 1e-24)) throw DegenerateGeometry("back-reflection: doa = -dod");
    return s * s.transpose() / n2;
}

LocationEstimate locate_nlos(const std::vector<EstimatedPath>& refl, const Vec3& x_t, double max_cond) {
    Eigen::Matrix4d A = Eigen::Matrix4d::Zero();
    Eigen::Vector4d b = Eigen::Vector4d::Zero();
    std::vector<int> used;
    std::vector<Eigen::Matrix<double, 3, 4>> Ms;
    std::vector<Vec3> rhs;
    for (int i = 0; i < static_cast<int>(refl.size()); ++i) {
        const auto& r = refl[i];
        Eigen::Matrix3d P;
        try {
            P = Eigen::Matrix3d::Identity() - reflection_projector(r.doa, r.dod);
        } catch (const DegenerateGeometry&) {
            warn(Warning::DroppedPath, "reflection " + std::to_string(i) + " has doa = -dod; dropped");
            continue;
        }
        Eigen::Matrix<double, 3, 4> It;
        It << Eigen::Matrix3d::Identity(), r.doa;
        Vec3 y = x_t - r.doa * (kSpeedOfLight * r.tdoa_s);
        A += It.transpose() * P * It;
        b += It.transpose() * P * y;
        Ms.push_back(P * It);
        rhs.push_back(P * y);
        used.push_back(i);
    }
    // Each reflection constrains two of the four unknowns; three are required.
    if (used.size() < 3)
        throw SingularSystem("NLOS solve needs 3 usable first-order paths, got " + std::to_string(used.size()));
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es(A);
    double lmin = es.eigenvalues().minCoeff();
    double lmax = es.eigenvalues().maxCoeff();
    if (!(lmin > 0.0) || lmax / lmin > max_cond) throw SingularSystem("NLOS normal matrix is ill-conditioned");
    Eigen::Vector4d sol = A.ldlt().solve(b);
    LocationEstimate e;
    e.mode = Mode::NLOS;
    e.x_hat = sol.head<3>();
    e.d0_hat = sol[3];
    double r2 = 0.0;
    for (std::size_t k = 0; k < Ms.size(); ++k) r2 += (Ms[k] * sol - rhs[k]).squaredNorm();
    e.residual = std::sqrt(r2);
    e.combo = used;
    return e;
}

std::vector<Vec3> reflection_points(const Vec3& x_hat, double d0_hat, const std::vector<EstimatedPath>& paths,
                                    const Vec3& x_t) {
    std::vector<Vec3> out;
    for (const auto& p : paths) {
        if (p.predicted_class == kClassLos) throw DomainError("LOS path has no interaction point");
        Vec3 s = p.dod + p.doa;
        double n2 = s.squaredNorm();
        if (!(n2 > 1e-24)) throw DomainError("path has doa = -dod");
        double dd = s.dot(x_hat - x_t + p.doa * (kSpeedOfLight * p.tdoa_s + d0_hat)) / n2;
        out.push_back(x_t + p.dod * dd);
    }
    return out;
}

LocationEstimate locate(const QualifiedChannel& q, const Vec3& x_t, const LocateOptions& opts) {
    std::vector<LocationEstimate> cands;
    auto height_ok = [&](const LocationEstimate& e) {
        return std::isfinite(e.x_hat.z()) && e.x_hat.z() >= opts.z_min && e.x_hat.z() <= opts.z_max;
    };
    const auto& f = q.first_order;
    if (q.mode == Mode::LOS && q.los_path) {
        const EstimatedPath& los = *q.los_path;
        // Per-reflection LOS ranges; a candidate's residual is the median gap
        // between its range and the ranges implied by the other reflections.
        std::vector<LocationEstimate> singles;
        std::vector<double> ranges;
        for (int i = 0; i < static_cast<int>(f.size()); ++i) {
            try {
                LocationEstimate e = locate_los(los, {f[i]}, x_t);
                e.combo = {i};
                ranges.push_back((e.x_hat - x_t).norm());
                singles.push_back(e);
            } catch (const DegenerateGeometry&) {
            }
        }
        auto spread = [&](double d, int skip) {
            std::vector<double> gaps;
            for (int k = 0; k < static_cast<int>(ranges.size()); ++k)
                if (k != skip) gaps.push_back(std::abs(d - ranges[k]));
            return gaps.empty() ? 0.0 : median(gaps);
        };
        for (int k = 0; k < static_cast<int>(singles.size()); ++k) {
            singles[k].residual = spread(ranges[k], k);
            if (height_ok(singles[k])) cands.push_back(singles[k]);
        }
        if (singles.size() > 1) {
            std::vector<EstimatedPath> sub;
            std::vector<int> idx;
            for (const auto& e : singles) {
                sub.push_back(f[e.combo[0]]);
                idx.push_back(e.combo[0]);
            }
            LocationEstimate e = locate_los(los, sub, x_t);
            e.combo = idx;
            e.residual = spread((e.x_hat - x_t).norm(), -1);
            if (height_ok(e)) cands.push_back(e);
        }
    } else if (q.mode == Mode::NLOS) {
        // Each 3-subset solution is scored by the median plane mismatch over
        // every qualified reflection, so a subset that only fits itself loses.
        auto mismatch = [&](const LocationEstimate& e, const EstimatedPath& r) {
            Eigen::Matrix3d P;
            try {
                P = Eigen::Matrix3d::Identity() - reflection_projector(r.doa, r.dod);
            } catch (const DegenerateGeometry&) {
                return std::numeric_limits<double>::quiet_NaN();
            }
            Vec3 y = x_t - r.doa * (kSpeedOfLight * r.tdoa_s);
            return (P * (e.x_hat + r.doa * e.d0_hat.value_or(0.0) - y)).norm();
        };
        const int n = static_cast<int>(f.size());
        int count = 0;
        for (int a = 0; a < n && count < opts.nlos_cap; ++a)
            for (int b = a + 1; b < n && count < opts.nlos_cap; ++b)
                for (int c = b + 1; c < n && count < opts.nlos_cap; ++c) {
                    ++count;
                    LocationEstimate e;
                    try {
                        e = locate_nlos({f[a], f[b], f[c]}, x_t);
                    } catch (const SingularSystem&) {
                        continue;
                    }
                    e.combo = {a, b, c};
                    std::vector<double> m;
                    for (const auto& r : f) {
                        double v = mismatch(e, r);
                        if (!std::isnan(v)) m.push_back(v);
                    }
                    e.residual = median(m);
                    if (height_ok(e)) cands.push_back(e);
                }
    }
    if (cands.empty()) throw NoValidCombination(std::string("no valid estimate in ") + mode_name(q.mode) + " mode");
    auto best = std::min_element(cands.begin(), cands.end(), [](const LocationEstimate& a, const LocationEstimate& b) {
        return a.residual < b.residual;
    });
    return *best;
}

}  // namespace mmloc
