// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include "doctest.h"
#include "mmloc/errors.hpp"
#include "mmloc/geoloc.hpp"
#include "support.hpp"

using namespace mmloc;

namespace {

EstimatedPath path(const Vec3& doa, const Vec3& dod, double tdoa, double gain, int cls) {
    EstimatedPath p;
    p.doa = doa.normalized();
    p.dod = dod.normalized();
    p.tdoa_s = tdoa;
    p.gain_mag = gain;
    p.predicted_class = cls;
    return p;
}

EstimatedPath with_class(double gain, int cls) { return path(Vec3::UnitX(), Vec3::UnitX(), 0.0, gain, cls); }

// LOS-relative estimates of a traced scene.
std::pair<EstimatedPath, std::vector<EstimatedPath>> los_inputs(const mmtest::Traced& t) {
    EstimatedPath los = mmtest::exact_estimate(*t.los, 0.0);
    std::vector<EstimatedPath> refl;
    for (const auto* p : t.first) refl.push_back(mmtest::exact_estimate(*p, p->toa_s - t.los->toa_s));
    return {los, refl};
}

std::vector<EstimatedPath> nlos_inputs(const mmtest::Traced& t, double t0) {
    std::vector<EstimatedPath> refl;
    for (const auto* p : t.first) refl.push_back(mmtest::exact_estimate(*p, p->toa_s - t0));
    return refl;
}

}  // namespace

TEST_CASE("law-of-sines LOS range") {
    Vec3 tx(0, 0, 0), rx(10, 0, 0), q(5, 5, 0);
    EstimatedPath los = path(tx - rx, rx - tx, 0.0, 1.0, kClassLos);
    double ct = 2.0 * std::sqrt(50.0) - 10.0;
    EstimatedPath r = path(q - rx, q - tx, ct / kSpeedOfLight, 0.5, kClassFirst);
    LocationEstimate e = locate_los(los, {r}, tx);
    CHECK(std::abs((e.x_hat - tx).norm() - 10.0) < 1e-9);
    CHECK((e.x_hat - rx).norm() < 1e-9);

    EstimatedPath coll = path(tx - rx, rx - tx, 0.0, 0.5, kClassFirst);
    CHECK_THROWS_AS(locate_los(los, {coll}, tx), DegenerateGeometry);
    CHECK_THROWS_AS(locate_los(los, {}, tx), DegenerateGeometry);
}

TEST_CASE("exact parameters give exact positions") {
    SceneConfig cfg;
    std::mt19937_64 rng(5);
    int n_los = 0, n_nlos = 0;
    mmtest::Traced t;
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        if (!mmtest::trace_scene(seed, cfg, t)) continue;
        const Vec3& xr = t.scene.rx_position;
        const Vec3& xt = t.scene.tx_position;
        if (t.los && !t.first.empty()) {
            auto [los, refl] = los_inputs(t);
            CHECK((locate_los(los, refl, xt).x_hat - xr).norm() < 1e-6);
            ++n_los;
        }
        if (t.first.size() >= 3) {
            double t0 = mmtest::uniform(rng, 0.0, 200e-9);
            LocationEstimate e = locate_nlos(nlos_inputs(t, t0), xt);
            CHECK((e.x_hat - xr).norm() < 1e-6);
            REQUIRE(e.d0_hat.has_value());
            CHECK(std::abs(*e.d0_hat - kSpeedOfLight * t0) < 1e-6);
            ++n_nlos;
        }
    }
    CHECK(n_los > 100);
    CHECK(n_nlos > 100);
}

TEST_CASE("NLOS example with a 50 ns offset") {
    SceneConfig cfg;
    mmtest::Traced t;
    std::uint64_t seed = 0;
    while (!mmtest::trace_scene(seed, cfg, t) || t.first.size() < 3) ++seed;
    std::vector<EstimatedPath> three = nlos_inputs(t, 50e-9);
    three.resize(3);
    LocationEstimate e = locate_nlos(three, t.scene.tx_position);
    CHECK((e.x_hat - t.scene.rx_position).norm() < 1e-6);
    CHECK(std::abs(*e.d0_hat - kSpeedOfLight * 50e-9) < 1e-6);
}

TEST_CASE("two reflections are not enough for the NLOS solve") {
    std::mt19937_64 rng(6);
    for (int k = 0; k < 100; ++k) {
        std::vector<EstimatedPath> two;
        for (int i = 0; i < 2; ++i)
            two.push_back(path(mmtest::random_unit(rng), mmtest::random_unit(rng), 1e-8, 1.0, kClassFirst));
        CHECK_THROWS_AS(locate_nlos(two, Vec3::Zero()), SingularSystem);
    }
}

TEST_CASE("reflection projector is a rank-one orthogonal projector") {
    std::mt19937_64 rng(7);
    for (int k = 0; k < 1000; ++k) {
        Vec3 a = mmtest::random_unit(rng), d = mmtest::random_unit(rng);
        Eigen::Matrix3d T = reflection_projector(a, d);
        CHECK((T * T - T).norm() < 1e-10);
        CHECK((T - T.transpose()).norm() < 1e-15);
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(Eigen::Matrix3d::Identity() - T);
        auto sv = svd.singularValues();
        CHECK(sv[2] < 1e-10);
        CHECK(sv[1] > 0.5);
    }
    Vec3 u = mmtest::random_unit(rng);
    CHECK_THROWS_AS(reflection_projector(u, -u), DegenerateGeometry);
}

TEST_CASE("back-reflections are dropped with a warning") {
    SceneConfig cfg;
    mmtest::Traced t;
    std::uint64_t seed = 0;
    while (!mmtest::trace_scene(seed, cfg, t) || t.first.size() < 3) ++seed;
    auto refl = nlos_inputs(t, 30e-9);
    refl.push_back(path(Vec3::UnitX(), -Vec3::UnitX(), 5e-8, 1.0, kClassFirst));
    int dropped = 0;
    set_warning_handler([&](Warning w, const std::string&) { dropped += w == Warning::DroppedPath; });
    LocationEstimate e = locate_nlos(refl, t.scene.tx_position);
    set_warning_handler(nullptr);
    CHECK(dropped == 1);
    CHECK((e.x_hat - t.scene.rx_position).norm() < 1e-6);
}

TEST_CASE("reflection points match the tracer") {
    SceneConfig cfg;
    mmtest::Traced t;
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        if (!mmtest::trace_scene(seed, cfg, t) || t.first.size() < 3) continue;
        const double t0 = 40e-9;
        auto refl = nlos_inputs(t, t0);
        LocationEstimate e = locate_nlos(refl, t.scene.tx_position);
        auto pts = reflection_points(e.x_hat, *e.d0_hat, refl, t.scene.tx_position);
        for (std::size_t k = 0; k < pts.size(); ++k) {
            CHECK((pts[k] - t.first[k]->interaction_points[0]).norm() < 1e-6);
            double dd = (pts[k] - t.scene.tx_position).norm(), da = (pts[k] - e.x_hat).norm();
            CHECK(std::abs(dd + da - (kSpeedOfLight * refl[k].tdoa_s + *e.d0_hat)) < 1e-6);
            ++checked;
        }
    }
    CHECK(checked > 50);
    CHECK_THROWS_AS(reflection_points(Vec3::Zero(), 0.0, {with_class(1.0, kClassLos)}, Vec3::Zero()), DomainError);
}

TEST_CASE("translation equivariance and LOS offset invariance") {
    SceneConfig cfg;
    std::mt19937_64 rng(8);
    mmtest::Traced t;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        if (!mmtest::trace_scene(seed, cfg, t) || !t.los || t.first.size() < 3) continue;
        Vec3 v = mmtest::random_point(rng, 500.0);
        const Vec3& xt = t.scene.tx_position;
        auto [los, refl] = los_inputs(t);
        Vec3 a = locate_los(los, refl, xt).x_hat, b = locate_los(los, refl, xt + v).x_hat;
        CHECK((b - a - v).norm() < 1e-9);
        auto n = nlos_inputs(t, 10e-9);
        Vec3 c = locate_nlos(n, xt).x_hat, d = locate_nlos(n, xt + v).x_hat;
        CHECK((d - c - v).norm() < 1e-8);

        const double shift = mmtest::uniform(rng, -100e-9, 100e-9);
        EstimatedPath los2 = los;
        los2.tdoa_s += shift;
        auto refl2 = refl;
        for (auto& r : refl2) r.tdoa_s += shift;
        CHECK((locate_los(los2, refl2, xt).x_hat - a).norm() < 1e-9);
    }
}

TEST_CASE("qualification rules") {
    std::vector<EstimatedPath> ok = {with_class(1.0, kClassLos), with_class(0.3, kClassFirst),
                                     with_class(0.2, kClassFirst)};
    QualifiedChannel q = qualify(ok);
    CHECK(q.mode == Mode::LOS);
    CHECK(q.first_order.size() == 2);

    CHECK(qualify({with_class(0.3, kClassFirst), with_class(0.2, kClassFirst)}).mode == Mode::UNLOCATABLE);
    CHECK(qualify({with_class(0.3, kClassFirst), with_class(0.2, kClassFirst), with_class(0.1, kClassFirst)}).mode ==
          Mode::NLOS);

    // 35 dB gap
    double weak = std::pow(10.0, -35.0 / 20.0);
    CHECK(qualify({with_class(1.0, kClassLos), with_class(weak, kClassFirst)}).mode == Mode::UNLOCATABLE);

    EstimatedPath strong = path(Vec3::UnitY(), Vec3::UnitY(), 0.0, 2.0, kClassLos);
    QualifiedChannel two = qualify({with_class(1.0, kClassLos), strong, with_class(0.5, kClassFirst)});
    REQUIRE(two.los_path.has_value());
    CHECK(two.los_path->gain_mag == 2.0);
    CHECK(qualify({}).mode == Mode::UNLOCATABLE);
}

TEST_CASE("locate: consistent subsets, corruption and height filter") {
    SceneConfig cfg;
    mmtest::Traced t;
    std::uint64_t seed = 0;
    while (!mmtest::trace_scene(seed, cfg, t) || t.first.size() < 4 || !t.los) ++seed;
    const Vec3& xt = t.scene.tx_position;
    const Vec3& xr = t.scene.rx_position;

    QualifiedChannel q;
    q.mode = Mode::NLOS;
    q.first_order = nlos_inputs(t, 20e-9);
    q.first_order.resize(4);
    for (int a = 0; a < 4; ++a)
        for (int b = a + 1; b < 4; ++b)
            for (int c = b + 1; c < 4; ++c)
                CHECK((locate_nlos({q.first_order[a], q.first_order[b], q.first_order[c]}, xt).x_hat - xr).norm() <
                      1e-6);
    LocateOptions wide;
    wide.z_min = -100.0;
    wide.z_max = 100.0;
    CHECK((locate(q, xt, wide).x_hat - xr).norm() < 1e-6);

    QualifiedChannel bad = q;
    bad.first_order[1].tdoa_s += 15e-9;
    bad.first_order[1].doa = (bad.first_order[1].doa + Vec3(0.0, 0.05, 0.02)).normalized();
    double all_err = (locate_nlos(bad.first_order, xt).x_hat - xr).norm();
    double pick_err = (locate(bad, xt, wide).x_hat - xr).norm();
    CHECK(pick_err < all_err);

    auto [los, refl] = los_inputs(t);
    QualifiedChannel lq;
    lq.mode = Mode::LOS;
    lq.los_path = los;
    lq.first_order = refl;
    CHECK((locate(lq, xt, wide).x_hat - xr).norm() < 1e-6);

    LocateOptions band;
    band.z_min = xr.z() + 5.0;
    band.z_max = xr.z() + 6.0;
    CHECK_THROWS_AS(locate(lq, xt, band), NoValidCombination);
    CHECK_THROWS_AS(locate(q, xt, band), NoValidCombination);
}

TEST_CASE("estimates at 10 m height are all rejected") {
    Vec3 tx(0, 0, 10), rx(10, 0, 10), qpt(5, 5, 10);
    EstimatedPath los = path(tx - rx, rx - tx, 0.0, 1.0, kClassLos);
    double ct = 2.0 * std::sqrt(50.0) - 10.0;
    EstimatedPath r = path(qpt - rx, qpt - tx, ct / kSpeedOfLight, 0.5, kClassFirst);
    QualifiedChannel q;
    q.mode = Mode::LOS;
    q.los_path = los;
    q.first_order = {r, r};
    CHECK_THROWS_AS(locate(q, tx), NoValidCombination);
}
