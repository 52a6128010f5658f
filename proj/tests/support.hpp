// SPDX-License-Identifier: Apache-2.0
// Generators and forward-synthesis helpers shared by the test binaries.
#pragma once

#include <random>
#include <vector>

#include "mmloc/channel.hpp"
#include "mmloc/classifier.hpp"
#include "mmloc/errors.hpp"
#include "mmloc/recovery.hpp"
#include "mmloc/scene.hpp"

namespace mmtest {

using mmloc::Vec3;

inline double uniform(std::mt19937_64& rng, double a, double b) {
    return std::uniform_real_distribution<double>(a, b)(rng);
}

inline int uniform_int(std::mt19937_64& rng, int a, int b) { return std::uniform_int_distribution<int>(a, b)(rng); }

inline Vec3 random_point(std::mt19937_64& rng, double half) {
    return {uniform(rng, -half, half), uniform(rng, -half, half), uniform(rng, -half, half)};
}

inline Vec3 random_unit(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v(n(rng), n(rng), n(rng));
    return v.normalized();
}

inline mmloc::cplx random_gain(std::mt19937_64& rng, double lo, double hi) {
    return std::polar(uniform(rng, lo, hi), uniform(rng, -3.14159, 3.14159));
}

inline mmloc::CMat random_cmat(std::mt19937_64& rng, int r, int c) {
    std::normal_distribution<double> n(0.0, 1.0);
    mmloc::CMat m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = {n(rng), n(rng)};
    return m;
}

// Error-free estimate of a traced path with the given delay.
inline mmloc::EstimatedPath exact_estimate(const mmloc::PathRecord& p, double tdoa_s) {
    mmloc::EstimatedPath e;
    e.gain_mag = std::abs(p.gain);
    e.gain_phase = std::arg(p.gain);
    e.tdoa_s = tdoa_s;
    e.doa = p.doa;
    e.dod = p.dod;
    e.predicted_class = mmloc::order_to_class(p.order);
    return e;
}

struct PlantedPath {
    int j1, j2, j3, j4, j5;
    mmloc::cplx gain;
};

// Traced-path record whose angles and delay sit exactly on dictionary atoms.
inline mmloc::PathRecord on_grid_record(const PlantedPath& p, const mmloc::DictionarySet& d,
                                        const mmloc::ChannelConfig& ch) {
    mmloc::PathRecord r;
    r.gain = p.gain;
    r.toa_s = d.grid3[p.j3];
    r.dod = mmloc::direction_from_sines(d.grid1[p.j1], d.grid2[p.j2], ch.tx);
    r.doa = mmloc::direction_from_sines(d.grid4[p.j4], d.grid5[p.j5], ch.rx);
    r.order = 1;
    return r;
}

// Index into an angular grid of n atoms whose sine has magnitude <= limit.
inline int inner_index(std::mt19937_64& rng, int n, double limit) {
    auto g = mmloc::sine_grid(n);
    std::vector<int> ok;
    for (int j = 0; j < n; ++j)
        if (std::abs(g[j]) <= limit) ok.push_back(j);
    return ok[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(ok.size()) - 1))];
}

// Traced scene split into the LOS record (if any) and the first-order records.
struct Traced {
    mmloc::Scene scene;
    std::vector<mmloc::PathRecord> paths;
    const mmloc::PathRecord* los = nullptr;
    std::vector<const mmloc::PathRecord*> first;
};

inline bool trace_scene(std::uint64_t seed, const mmloc::SceneConfig& cfg, Traced& out) {
    out.scene = mmloc::generate_scene(seed, cfg);
    try {
        out.paths = mmloc::trace_paths(out.scene, 2);
    } catch (const mmloc::EmptyChannel&) {
        return false;
    }
    out.los = nullptr;
    out.first.clear();
    for (const auto& p : out.paths) {
        if (p.order == 0) out.los = &p;
        if (p.order == 1) out.first.push_back(&p);
    }
    return true;
}

}  // namespace mmtest
