// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "mmloc/channel.hpp"
#include "mmloc/sounding.hpp"

namespace mmloc {

// Sparsifying dictionaries. Dimension order: 1 DoD azimuth, 2 DoD elevation,
// 3 delay, 4 DoA azimuth, 5 DoA elevation. Angular grids hold sines.
struct DictionarySet {
    CMat psi1, psi2, psi3, psi4, psi5;
    Eigen::VectorXd grid1, grid2, grid3, grid4, grid5;
    int k_res = 1;
};

// -1 + 2 j / n, j = 0..n-1
Eigen::VectorXd sine_grid(int n);

DictionarySet build_dictionaries(const ChannelConfig& ch, int k_res);

// Implicit (q m_t) x N_t^x x N_t^y x N_d tensor built from the precoders and symbols.
struct MeasurementTensor {
    std::vector<CMat> F;
    CMat symbols;  // n_s x q
    int n_d = 0;
    int ntx = 0, nty = 0;

    int q() const { return static_cast<int>(symbols.cols()); }
    int rows() const { return q() * static_cast<int>(F.size()); }
    cplx at(int row, int i1, int i2, int i3) const;  // zero-based indices
    // Columns ordered i3 * N_t + i1 * nty + i2.
    CMat dense() const;
};

MeasurementTensor build_measurement_tensor(const std::vector<CMat>& F, const CMat& symbols, int n_d,
                                           const ArrayGeometry& tx);

struct Support {
    int j1 = 0, j2 = 0, j3 = 0;
    bool operator==(const Support&) const = default;
};

struct Stage1Result {
    std::vector<Support> supports;
    CMat betas;  // one row per support, n_s m_r columns
    std::vector<double> residual_norms;  // after each extraction
};

Stage1Result momp_stage1(const CMat& y_m, const MeasurementTensor& phi, const DictionarySet& dict, int n_est,
                         int n_iter = 3);

struct DoaResult {
    int j4 = 0, j5 = 0;
    cplx gain{0.0, 0.0};
    bool degenerate = false;
};

// w_m: N_r x (n_s m_r) stacked whitened combiners.
DoaResult retrieve_doa(const CVec& beta, const CMat& w_m, const DictionarySet& dict, int n_iter = 3);

CMat stack_combiners(const std::vector<CMat>& w_breve);

struct EstimatedPath {
    double gain_mag = 0.0;
    double gain_phase = 0.0;
    double tdoa_s = 0.0;
    Vec3 doa = Vec3::UnitX();
    Vec3 dod = Vec3::UnitX();
    CVec beta;
    std::array<int, 5> grid{};
    int predicted_class = 0;  // 0 until classified
};

struct RecoveryConfig {
    int k_res = 4;
    int n_est = 5;
    int n_iter = 3;
};

std::vector<EstimatedPath> estimate_channel(const ObservationMatrix& obs, const MeasurementTensor& phi,
                                            const DictionarySet& dict, const ChannelConfig& ch,
                                            const RecoveryConfig& rc, double p_t);

// Vectorized formulation: column k of A is vec(Y_M) produced by Kronecker atom k.
struct OmpProblem {
    CMat A;
    std::array<int, 5> dims{};  // N_1^a .. N_5^a
};

inline constexpr std::size_t kOmpSizeCap = std::size_t{1} << 24;

OmpProblem build_omp_problem(const MeasurementTensor& phi, const CMat& w_m, const DictionarySet& dict,
                             std::size_t cap = kOmpSizeCap);

// Column index -> (j1..j5). Atom order is j3 outermost, then (j1, j2), then (j4, j5).
std::array<int, 5> omp_atom_indices(std::size_t col, const std::array<int, 5>& dims);

struct OmpResult {
    std::vector<std::size_t> support;
    CVec coeffs;
    std::vector<double> residual_norms;
};

OmpResult omp_reference(const CVec& y, const CMat& A, int n_est);

struct ComplexityConfig {
    int ntx = 8, nty = 8, nrx = 4, nry = 4, n_d = 32;
    int k_res = 4, n_s = 4, q = 64, n_est = 5, n_iter = 3;
};

struct ComplexityCounts {
    double omp = 0.0, momp = 0.0, two_stage = 0.0;
};

ComplexityCounts complexity_probe(const ComplexityConfig& c);

}  // namespace mmloc
