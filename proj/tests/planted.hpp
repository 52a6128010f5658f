// SPDX-License-Identifier: Apache-2.0
// Noiseless observations of channels whose paths sit on dictionary atoms.
#pragma once

#include <cstdlib>

#include "mmloc/recovery.hpp"
#include "mmloc/sounding.hpp"
#include "support.hpp"

namespace mmtest {

struct Bench {
    mmloc::ChannelConfig ch;
    mmloc::SoundingConfig sc;
    mmloc::RecoveryConfig rc;
    mmloc::TrainingSet train;
    mmloc::CMat symbols;
    mmloc::MeasurementTensor phi;
    mmloc::DictionarySet dict;
    mmloc::CMat w_m;

    Bench(mmloc::ChannelConfig c, mmloc::SoundingConfig s, mmloc::RecoveryConfig r) : ch(c), sc(s), rc(r) {
        sc.noise_var = 0.0;
        train = mmloc::build_training_set(sc, ch.tx, ch.rx);
        symbols = mmloc::qpsk_symbols(sc.n_s, sc.q, 99);
        phi = mmloc::build_measurement_tensor(train.F, symbols, ch.n_d, ch.tx);
        dict = mmloc::build_dictionaries(ch, rc.k_res);
        std::vector<mmloc::CMat> wb;
        for (const auto& w : train.W) wb.push_back(mmloc::whiten(w).w_breve);
        w_m = mmloc::stack_combiners(wb);
    }

    mmloc::ObservationMatrix observe(const std::vector<PlantedPath>& paths) const {
        std::vector<mmloc::PathRecord> recs;
        for (const auto& p : paths) recs.push_back(on_grid_record(p, dict, ch));
        return mmloc::observe(mmloc::channel_taps(recs, 0.0, ch), train, symbols, sc);
    }
};

// Tiny instance used for the vectorized-OMP oracle.
inline Bench tiny_bench() {
    mmloc::ChannelConfig ch;
    ch.tx = mmloc::ArrayGeometry{4, 2};
    ch.rx = mmloc::ArrayGeometry{2, 2, mmloc::facing_negative_x()};
    ch.n_d = 8;
    mmloc::SoundingConfig sc;
    sc.m_t = 4;
    sc.m_r = 2;
    sc.n_s = 2;
    sc.q = 16;
    mmloc::RecoveryConfig rc;
    rc.k_res = 2;
    return Bench(ch, sc, rc);
}

inline Bench desk_bench() { return Bench({}, {}, {}); }

inline bool separated(const PlantedPath& a, const PlantedPath& b, int cells) {
    return std::abs(a.j1 - b.j1) >= cells && std::abs(a.j2 - b.j2) >= cells && std::abs(a.j3 - b.j3) >= cells &&
           std::abs(a.j4 - b.j4) >= cells && std::abs(a.j5 - b.j5) >= cells;
}

// Up to n paths with angles inside |sin| <= 0.6 and delays inside the tap
// window, pairwise at least `cells` atoms apart in every dimension.
inline std::vector<PlantedPath> plant(std::mt19937_64& rng, const Bench& b, int n, int cells) {
    const auto& d = b.dict;
    const int n3 = static_cast<int>(d.grid3.size());
    const int k = d.k_res;
    std::vector<PlantedPath> out;
    for (int tries = 0; static_cast<int>(out.size()) < n && tries < 10000; ++tries) {
        if (tries % 200 == 199) out.clear();  // greedy placement can box itself in
        PlantedPath p{inner_index(rng, static_cast<int>(d.grid1.size()), 0.6),
                      inner_index(rng, static_cast<int>(d.grid2.size()), 0.6),
                      uniform_int(rng, k, n3 - 2 * k),
                      inner_index(rng, static_cast<int>(d.grid4.size()), 0.6),
                      inner_index(rng, static_cast<int>(d.grid5.size()), 0.6),
                      random_gain(rng, 1e-6, 1e-5)};
        bool ok = true;
        for (const auto& q : out) ok = ok && separated(p, q, cells);
        if (ok) out.push_back(p);
    }
    return out;
}

}  // namespace mmtest
