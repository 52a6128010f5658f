// SPDX-License-Identifier: Apache-2.0
#include "mmloc/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mmloc/errors.hpp"

namespace mmloc {

namespace {

// Lowest index whose score is within a relative 1e-10 of the maximum.
int pick(const Eigen::VectorXd& s) {
    if (s.size() == 0) return 0;
    double m = s.maxCoeff();
    if (!(m > 0.0)) return 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s[i] >= m * (1.0 - 1e-10)) return static_cast<int>(i);
    return 0;
}

// Indices of the k largest scores, best first.
std::vector<int> top_k(const Eigen::VectorXd& s, int k) {
    std::vector<int> idx(static_cast<std::size_t>(s.size()));
    std::iota(idx.begin(), idx.end(), 0);
    k = std::min<int>(k, static_cast<int>(idx.size()));
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) { return s[a] > s[b] || (s[a] == s[b] && a < b); });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

// |u_k^H R|^2 / |u_k|^2 for every column u_k of U.
Eigen::VectorXd scores(const CMat& U, const CMat& R) {
    Eigen::VectorXd num = (U.adjoint() * R).rowwise().squaredNorm();
    Eigen::VectorXd den = U.colwise().squaredNorm().transpose();
    Eigen::VectorXd s(num.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = den[i] > 0.0 ? num[i] / den[i] : 0.0;
    return s;
}

// Same scores for U = B D without forming U: num_k = d_k^H (P P^H) d_k with
// P = B^H R, den_k = d_k^H (B^H B) d_k.
Eigen::VectorXd factored_scores(const CMat& B, const CMat& D, const CMat& R) {
    CMat P = B.adjoint() * R;
    CMat S = P * P.adjoint();
    CMat G = B.adjoint() * B;
    Eigen::VectorXd num = (D.conjugate().cwiseProduct(S * D)).colwise().sum().real().transpose();
    Eigen::VectorXd den = (D.conjugate().cwiseProduct(G * D)).colwise().sum().real().transpose();
    Eigen::VectorXd s(num.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = den[i] > 0.0 ? std::max(num[i], 0.0) / den[i] : 0.0;
    return s;
}

// Scores of the columns of D against the rows of M, i.e. U = D and R = M.
Eigen::VectorXd direct_scores(const CMat& D, const CMat& M) {
    CMat S = M * M.adjoint();
    Eigen::VectorXd num = (D.conjugate().cwiseProduct(S * D)).colwise().sum().real().transpose();
    Eigen::VectorXd den = D.colwise().squaredNorm().transpose();
    Eigen::VectorXd s(num.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = den[i] > 0.0 ? std::max(num[i], 0.0) / den[i] : 0.0;
    return s;
}

CMat kron(const CMat& a, const CMat& b) {
    CMat k(a.rows() * b.rows(), a.cols() * b.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    return k;
}

CMat least_squares(const CMat& A, const CMat& B) { return A.completeOrthogonalDecomposition().solve(B); }

class Momp {
public:
    Momp(const MeasurementTensor& phi, const DictionarySet& d) : phi_(phi), d_(d) {
        ntx_ = phi.ntx;
        nty_ = phi.nty;
        nt_ = ntx_ * nty_;
        nd_ = phi.n_d;
        ns_ = static_cast<int>(phi.symbols.rows());
        q_ = phi.q();
        mt_ = static_cast<int>(phi.F.size());
        const CMat& s = phi.symbols;
        const Eigen::Index n3 = d.psi3.cols();
        xs_.resize(n3);
        for (Eigen::Index j = 0; j < n3; ++j) {
            CMat x = CMat::Zero(ns_, q_);
            for (int n = 0; n < nd_ && n < q_; ++n) {
                cplx c = d.psi3(n, j);
                if (c == 0.0) continue;
                x.rightCols(q_ - n) += c * s.leftCols(q_ - n);
            }
            xs_[j] = std::move(x);
        }
    }

    CVec atom(int j1, int j2, int j3) const {
        CVec w = kron(d_.psi1.col(j1), d_.psi2.col(j2));
        CVec u(phi_.rows());
        for (int m = 0; m < mt_; ++m) {
            CVec g = phi_.F[m].transpose() * w;
            u.segment(static_cast<Eigen::Index>(m) * q_, q_) = xs_[j3].transpose() * g;
        }
        return u;
    }

    // Scores along dimension 1 (j2, j3 fixed) or 2 (j1, j3 fixed).
    Eigen::VectorXd sweep_angle(int dim, int fixed, int j3, const CMat& R) const {
        const CMat& fix = dim == 1 ? d_.psi2 : d_.psi1;
        const CMat& free = dim == 1 ? d_.psi1 : d_.psi2;
        const int nfree = dim == 1 ? ntx_ : nty_;
        CMat V(phi_.rows(), nfree);
        for (int m = 0; m < mt_; ++m) {
            CMat Z = phi_.F[m] * xs_[j3];  // nt x q
            for (int a = 0; a < nfree; ++a) {
                Eigen::RowVectorXcd acc = Eigen::RowVectorXcd::Zero(q_);
                if (dim == 1) {
                    for (int b = 0; b < nty_; ++b) acc += fix(b, fixed) * Z.row(a * nty_ + b);
                } else {
                    for (int b = 0; b < ntx_; ++b) acc += fix(b, fixed) * Z.row(b * nty_ + a);
                }
                V.block(static_cast<Eigen::Index>(m) * q_, a, q_, 1) = acc.transpose();
            }
        }
        return factored_scores(V, free, R);
    }

    Eigen::VectorXd sweep_delay(int j1, int j2, const CMat& R) const {
        CVec w = kron(d_.psi1.col(j1), d_.psi2.col(j2));
        CMat Zd = CMat::Zero(phi_.rows(), nd_);
        for (int m = 0; m < mt_; ++m) {
            CVec h = phi_.symbols.transpose() * (phi_.F[m].transpose() * w);  // length q
            for (int n = 0; n < nd_ && n < q_; ++n)
                Zd.block(static_cast<Eigen::Index>(m) * q_ + n, n, q_ - n, 1) = h.head(q_ - n);
        }
        return factored_scores(Zd, d_.psi3, R);
    }

    // Phi^H R with rows ordered n * N_t + i.
    CMat back_project(const CMat& R) const {
        const Eigen::Index C = R.cols();
        CMat T = CMat::Zero(static_cast<Eigen::Index>(nd_) * nt_, C);
        const CMat sc = phi_.symbols.conjugate();
        for (int m = 0; m < mt_; ++m) {
            const CMat Fc = phi_.F[m].conjugate();
            for (int n = 0; n < nd_ && n < q_; ++n) {
                CMat A = sc.leftCols(q_ - n) * R.block(static_cast<Eigen::Index>(m) * q_ + n, 0, q_ - n, C);
                T.middleRows(static_cast<Eigen::Index>(n) * nt_, nt_) += Fc * A;
            }
        }
        return T;
    }

    // Sequential marginal sweep j1 -> j2 -> j3. Besides the greedy start this
    // also returns starts seeded by the next two j2 and by the runner-up j1,
    // since a wrong (j2, j3) pair can be a fixed point of refine().
    std::vector<Support> initialize(const CMat& R) const {
        const Eigen::Index C = R.cols();
        CMat T = back_project(R);
        // dimension 1 with 2 and 3 left free
        CMat M1(ntx_, static_cast<Eigen::Index>(nty_) * nd_ * C);
        for (int n = 0; n < nd_; ++n)
            for (int i1 = 0; i1 < ntx_; ++i1)
                for (int i2 = 0; i2 < nty_; ++i2)
                    M1.block(i1, (static_cast<Eigen::Index>(n) * nty_ + i2) * C, 1, C) =
                        T.row(static_cast<Eigen::Index>(n) * nt_ + i1 * nty_ + i2);
        auto j2_scores = [&](int j1) {
            CMat M2 = CMat::Zero(nty_, static_cast<Eigen::Index>(nd_) * C);
            for (int n = 0; n < nd_; ++n)
                for (int i1 = 0; i1 < ntx_; ++i1)
                    for (int i2 = 0; i2 < nty_; ++i2)
                        M2.block(i2, static_cast<Eigen::Index>(n) * C, 1, C) +=
                            std::conj(d_.psi1(i1, j1)) * T.row(static_cast<Eigen::Index>(n) * nt_ + i1 * nty_ + i2);
            return direct_scores(d_.psi2, M2);
        };
        auto start = [&](int j1, int j2) { return Support{j1, j2, pick(sweep_delay(j1, j2, R))}; };
        Eigen::VectorXd s1 = direct_scores(d_.psi1, M1);
        const int a1 = pick(s1);
        std::vector<Support> out;
        for (int j2 : top_k(j2_scores(a1), 3)) out.push_back(start(a1, j2));
        for (int j1 : top_k(s1, 2))
            if (j1 != a1) out.push_back(start(j1, pick(j2_scores(j1))));
        return out;
    }

    // Normalized correlation of the atom with the residual.
    double objective(const Support& s, const CMat& R) const {
        CVec u = atom(s.j1, s.j2, s.j3);
        double den = u.squaredNorm();
        return den > 0.0 ? (u.adjoint() * R).squaredNorm() / den : 0.0;
    }

    Support refine(Support s, const CMat& R, int n_iter) const {
        for (int it = 0; it < n_iter; ++it) {
            s.j1 = pick(sweep_angle(1, s.j2, s.j3, R));
            s.j2 = pick(sweep_angle(2, s.j1, s.j3, R));
            s.j3 = pick(sweep_delay(s.j1, s.j2, R));
        }
        return s;
    }

private:
    const MeasurementTensor& phi_;
    const DictionarySet& d_;
    int ntx_, nty_, nt_, nd_, ns_, q_, mt_;
    std::vector<CMat> xs_;
};

}  // namespace

Eigen::VectorXd sine_grid(int n) {
    Eigen::VectorXd g(n);
    for (int j = 0; j < n; ++j) g[j] = -1.0 + 2.0 * j / n;
    return g;
}

DictionarySet build_dictionaries(const ChannelConfig& ch, int k_res) {
    if (k_res < 1) throw ConfigError("k_res must be >= 1");
    DictionarySet d;
    d.k_res = k_res;
    auto angular = [&](int n_elem, bool conj, Eigen::VectorXd& grid) {
        grid = sine_grid(k_res * n_elem);
        CMat psi(n_elem, grid.size());
        for (Eigen::Index j = 0; j < grid.size(); ++j) {
            CVec a = steering_factor(grid[j], n_elem);
            psi.col(j) = conj ? CVec(a.conjugate()) : a;
        }
        return psi;
    };
    d.psi1 = angular(ch.tx.n_x, true, d.grid1);
    d.psi2 = angular(ch.tx.n_y, true, d.grid2);
    d.psi4 = angular(ch.rx.n_x, false, d.grid4);
    d.psi5 = angular(ch.rx.n_y, false, d.grid5);
    const int n3 = k_res * ch.n_d;
    d.grid3.resize(n3);
    d.psi3 = CMat::Zero(ch.n_d, n3);
    for (int j = 0; j < n3; ++j) {
        double t = j * ch.ts / k_res;
        d.grid3[j] = t;
        for (int n = 0; n < ch.n_d; ++n) {
            double dt = n * ch.ts - t;
            if (std::abs(dt) > ch.pulse_span * ch.ts) continue;
            d.psi3(n, j) = raised_cosine(dt, ch.beta, ch.ts);
        }
    }
    return d;
}

cplx MeasurementTensor::at(int row, int i1, int i2, int i3) const {
    const int mt = row / q();
    const int qq = row % q();
    if (qq < i3) return 0.0;
    CVec v = F[mt] * symbols.col(qq - i3);
    return v[i1 * nty + i2];
}

CMat MeasurementTensor::dense() const {
    const int nt = ntx * nty;
    const int Q = q();
    CMat D = CMat::Zero(rows(), static_cast<Eigen::Index>(n_d) * nt);
    for (std::size_t m = 0; m < F.size(); ++m) {
        CMat FS = F[m] * symbols;  // nt x q
        for (int n = 0; n < n_d; ++n)
            for (int qq = n; qq < Q; ++qq)
                D.block(static_cast<Eigen::Index>(m) * Q + qq, static_cast<Eigen::Index>(n) * nt, 1, nt) =
                    FS.col(qq - n).transpose();
    }
    return D;
}

MeasurementTensor build_measurement_tensor(const std::vector<CMat>& F, const CMat& symbols, int n_d,
                                           const ArrayGeometry& tx) {
    for (const auto& f : F)
        if (f.rows() != tx.size() || f.cols() != symbols.rows()) throw ShapeMismatch("precoder shape");
    MeasurementTensor t;
    t.F = F;
    t.symbols = symbols;
    t.n_d = n_d;
    t.ntx = tx.n_x;
    t.nty = tx.n_y;
    return t;
}

Stage1Result momp_stage1(const CMat& y_m, const MeasurementTensor& phi, const DictionarySet& dict, int n_est,
                         int n_iter) {
    if (n_est < 1) throw ConfigError("n_est must be >= 1");
    if (y_m.rows() != phi.rows()) throw ShapeMismatch("observation rows != q * m_t");
    Momp m(phi, dict);
    Stage1Result out;
    CMat U(y_m.rows(), 0);
    CMat R = y_m;
    const double y_norm = R.norm();
    double prev = y_norm;
    for (int k = 0; k < n_est; ++k) {
        Support s;
        double best = -1.0;
        for (const Support& init : m.initialize(R)) {
            Support c = m.refine(init, R, n_iter);
            double v = m.objective(c, R);
            if (v > best * (1.0 + 1e-10)) {
                best = v;
                s = c;
            }
        }
        // A repeated atom adds nothing and makes the LS split its gain.
        if (std::find(out.supports.begin(), out.supports.end(), s) != out.supports.end()) break;
        out.supports.push_back(s);
        U.conservativeResize(Eigen::NoChange, U.cols() + 1);
        U.col(U.cols() - 1) = m.atom(s.j1, s.j2, s.j3);
        out.betas = least_squares(U, y_m);
        R = y_m - U * out.betas;
        double r = R.norm();
        if (r > prev * (1.0 + 1e-9) + 1e-12 * y_norm)
            warn(Warning::Convergence, "residual grew from " + std::to_string(prev) + " to " + std::to_string(r));
        out.residual_norms.push_back(r);
        prev = r;
        if (r <= 1e-12 * y_norm) break;  // exact fit
    }
    return out;
}

CMat stack_combiners(const std::vector<CMat>& w_breve) {
    if (w_breve.empty()) return {};
    Eigen::Index cols = 0;
    for (const auto& w : w_breve) cols += w.cols();
    CMat m(w_breve.front().rows(), cols);
    Eigen::Index c = 0;
    for (const auto& w : w_breve) {
        m.middleCols(c, w.cols()) = w;
        c += w.cols();
    }
    return m;
}

DoaResult retrieve_doa(const CVec& beta, const CMat& w_m, const DictionarySet& dict, int n_iter) {
    DoaResult r;
    const Eigen::Index nrx = dict.psi4.rows();
    const Eigen::Index nry = dict.psi5.rows();
    if (w_m.cols() != beta.size() || w_m.rows() != nrx * nry) throw ShapeMismatch("combiner/beta shape");
    CVec g = w_m * beta;
    if (beta.squaredNorm() == 0.0 || g.squaredNorm() == 0.0) {
        r.degenerate = true;
        return r;
    }
    // G(i4, i5) = g[i4 * nry + i5]; objective |psi4_j4^H G conj(psi5_j5)|
    CMat G(nrx, nry);
    for (Eigen::Index a = 0; a < nrx; ++a)
        for (Eigen::Index b = 0; b < nry; ++b) G(a, b) = g[a * nry + b];
    const CMat psi5c = dict.psi5.conjugate();
    r.j4 = pick(scores(dict.psi4, G));
    auto along5 = [&](int j4) {
        CVec v = (dict.psi4.col(j4).adjoint() * G).transpose();  // length nry
        return Eigen::VectorXd((psi5c.transpose() * v).cwiseAbs2());
    };
    auto along4 = [&](int j5) { return Eigen::VectorXd((dict.psi4.adjoint() * (G * psi5c.col(j5))).cwiseAbs2()); };
    r.j5 = pick(along5(r.j4));
    for (int it = 0; it < n_iter; ++it) {
        r.j4 = pick(along4(r.j5));
        r.j5 = pick(along5(r.j4));
    }
    CVec ar(nrx * nry);
    for (Eigen::Index a = 0; a < nrx; ++a)
        for (Eigen::Index b = 0; b < nry; ++b) ar[a * nry + b] = dict.psi4(a, r.j4) * dict.psi5(b, r.j5);
    r.gain = ar.dot(g) / ar.squaredNorm();  // dot conjugates the first argument
    return r;
}

std::vector<EstimatedPath> estimate_channel(const ObservationMatrix& obs, const MeasurementTensor& phi,
                                            const DictionarySet& dict, const ChannelConfig& ch,
                                            const RecoveryConfig& rc, double p_t) {
    Stage1Result s1 = momp_stage1(obs.y_m, phi, dict, rc.n_est, rc.n_iter);
    CMat w_m = stack_combiners(obs.whitened_combiners);
    const double amp = std::sqrt(p_t);
    std::vector<EstimatedPath> out;
    for (std::size_t i = 0; i < s1.supports.size(); ++i) {
        const Support& s = s1.supports[i];
        EstimatedPath p;
        p.beta = s1.betas.row(static_cast<Eigen::Index>(i)).transpose();
        DoaResult d = retrieve_doa(p.beta, w_m, dict, rc.n_iter);
        cplx alpha = d.gain / amp;
        p.gain_mag = std::abs(alpha);
        p.gain_phase = std::arg(alpha);
        p.tdoa_s = dict.grid3[s.j3];
        p.dod = direction_from_sines(dict.grid1[s.j1], dict.grid2[s.j2], ch.tx);
        p.doa = direction_from_sines(dict.grid4[d.j4], dict.grid5[d.j5], ch.rx);
        p.grid = {s.j1, s.j2, s.j3, d.j4, d.j5};
        out.push_back(std::move(p));
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const EstimatedPath& a, const EstimatedPath& b) { return a.gain_mag > b.gain_mag; });
    return out;
}

OmpProblem build_omp_problem(const MeasurementTensor& phi, const CMat& w_m, const DictionarySet& dict,
                             std::size_t cap) {
    OmpProblem p;
    p.dims = {static_cast<int>(dict.psi1.cols()), static_cast<int>(dict.psi2.cols()),
              static_cast<int>(dict.psi3.cols()), static_cast<int>(dict.psi4.cols()),
              static_cast<int>(dict.psi5.cols())};
    const std::size_t n_atoms = std::accumulate(p.dims.begin(), p.dims.end(), std::size_t{1},
                                                [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
    const std::size_t n_rows = static_cast<std::size_t>(phi.rows()) * static_cast<std::size_t>(w_m.cols());
    if (n_rows * n_atoms > cap)
        throw SizeCap("OMP problem " + std::to_string(n_rows) + " x " + std::to_string(n_atoms) + " exceeds cap");
    CMat Ut = phi.dense() * kron(dict.psi3, kron(dict.psi1, dict.psi2));
    CMat Br = w_m.adjoint() * kron(dict.psi4, dict.psi5);
    const Eigen::Index R = Ut.rows();
    const Eigen::Index C = Br.rows();
    p.A.resize(R * C, static_cast<Eigen::Index>(n_atoms));
    const Eigen::Index nr_atoms = Br.cols();
    for (Eigen::Index jt = 0; jt < Ut.cols(); ++jt)
        for (Eigen::Index jr = 0; jr < nr_atoms; ++jr) {
            Eigen::Index col = jt * nr_atoms + jr;
            for (Eigen::Index c = 0; c < C; ++c) p.A.col(col).segment(c * R, R) = Br(c, jr) * Ut.col(jt);
        }
    return p;
}

std::array<int, 5> omp_atom_indices(std::size_t col, const std::array<int, 5>& dims) {
    const std::size_t nr = static_cast<std::size_t>(dims[3]) * dims[4];
    const std::size_t nt = static_cast<std::size_t>(dims[0]) * dims[1];
    std::size_t jr = col % nr;
    std::size_t jt = col / nr;
    std::size_t rem = jt % nt;
    return {static_cast<int>(rem / dims[1]), static_cast<int>(rem % dims[1]), static_cast<int>(jt / nt),
            static_cast<int>(jr / dims[4]), static_cast<int>(jr % dims[4])};
}

OmpResult omp_reference(const CVec& y, const CMat& A, int n_est) {
    OmpResult out;
    if (n_est <= 0) return out;
    if (A.rows() != y.size()) throw ShapeMismatch("measurement rows != observation length");
    CVec r = y;
    CMat As(A.rows(), 0);
    for (int k = 0; k < n_est; ++k) {
        int best = pick(scores(A, r));
        out.support.push_back(static_cast<std::size_t>(best));
        As.conservativeResize(Eigen::NoChange, As.cols() + 1);
        As.col(As.cols() - 1) = A.col(best);
        out.coeffs = least_squares(As, y);
        r = y - As * out.coeffs;
        out.residual_norms.push_back(r.norm());
    }
    return out;
}

ComplexityCounts complexity_probe(const ComplexityConfig& c) {
    const double ns[5] = {double(c.ntx), double(c.nty), double(c.n_d), double(c.nrx), double(c.nry)};
    double prod_s = 1.0, prod_sa = 1.0, sum_a = 0.0, prod_s3 = 1.0, sum_a3 = 0.0;
    for (int k = 0; k < 5; ++k) {
        double na = c.k_res * ns[k];
        prod_s *= ns[k];
        prod_sa *= ns[k] * na;
        sum_a += na;
        if (k < 3) {
            prod_s3 *= ns[k];
            sum_a3 += na;
        }
    }
    const double base = double(c.n_est) * c.n_s * c.q;
    ComplexityCounts r;
    r.omp = base * prod_sa;
    r.momp = base * c.n_iter * sum_a * prod_s;
    r.two_stage = base * c.n_iter * sum_a3 * prod_s3;
    return r;
}

}  // namespace mmloc
