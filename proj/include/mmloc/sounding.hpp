// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "mmloc/channel.hpp"

namespace mmloc {

struct SoundingConfig {
    int m_t = 16;
    int m_r = 4;
    int q = 64;
    int n_s = 4;
    double p_t = 10.0;         // W
    double noise_var = 4e-15;  // W
    std::uint64_t rng_seed = 1;
};

struct TrainingSet {
    std::vector<CMat> F;  // m_t precoders, N_t x n_s
    std::vector<CMat> W;  // m_r combiners, N_r x n_s
};

struct Whitened {
    CMat L;        // W^H W = L L^H
    CMat w_breve;  // W L^{-H}, orthonormal columns
};

struct ObservationMatrix {
    CMat y_m;                             // (q m_t) x (n_s m_r)
    std::vector<CMat> whitened_combiners; // m_r matrices
};

struct SoundingBlock {
    int m_t = 0;
    int m_r = 0;
    CMat y;  // n_s x q
};

CMat dft_codebook(int n);

TrainingSet build_training_set(const SoundingConfig& cfg, const ArrayGeometry& tx, const ArrayGeometry& rx);

// Unit-modulus QPSK scaled so that E[s s^H] = I / n_s.
CMat qpsk_symbols(int n_s, int q, std::uint64_t seed);

CMat shifted_symbol_matrix(const CMat& s, int n_d);

Whitened whiten(const CMat& W);

CMat sound(const ChannelTaps& taps, const CMat& F, const CMat& w_breve, const CMat& S,
           const SoundingConfig& cfg, std::mt19937_64& rng);

ObservationMatrix assemble_observation(const std::vector<SoundingBlock>& blocks, int m_t, int m_r,
                                       std::vector<CMat> whitened_combiners);

// Sounds every (m_t, m_r) pair with a per-pair RNG stream derived from cfg.rng_seed.
ObservationMatrix observe(const ChannelTaps& taps, const TrainingSet& train, const CMat& symbols,
                          const SoundingConfig& cfg);

void write_matrix(std::ostream& os, const CMat& m);
CMat read_matrix(std::istream& is);

}  // namespace mmloc
