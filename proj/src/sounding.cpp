// SPDX-License-Identifier: Apache-2.0
#include "mmloc/sounding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>

#include "mmloc/errors.hpp"

namespace mmloc {

namespace {

CMat khatri_rao_set(int count, int n_s, int nx, int ny, const char* what) {
    if (count * n_s > nx * ny)
        throw ConfigError(std::string(what) + ": codeword pool exhausted (" + std::to_string(count * n_s) +
                          " > " + std::to_string(nx * ny) + ")");
    CMat cx = dft_codebook(nx);
    CMat cy = dft_codebook(ny);
    CMat all(nx * ny, count * n_s);
    for (int k = 0; k < count * n_s; ++k) {
        int ix = k / ny;
        int iy = k % ny;
        for (int i = 0; i < nx; ++i)
            for (int j = 0; j < ny; ++j) all(i * ny + j, k) = cx(i, ix) * cy(j, iy);
    }
    return all;
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw SchemaError("matrix file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace

CMat dft_codebook(int n) {
    CMat c(n, n);
    const double s = 1.0 / std::sqrt(static_cast<double>(n));
    for (int i = 0; i < n; ++i)
        for (int r = 0; r < n; ++r) c(r, i) = std::polar(s, 2.0 * std::numbers::pi * r * i / n);
    return c;
}

TrainingSet build_training_set(const SoundingConfig& cfg, const ArrayGeometry& tx, const ArrayGeometry& rx) {
    if (cfg.m_t < 1 || cfg.m_r < 1 || cfg.n_s < 1) throw ConfigError("m_t, m_r, n_s must be positive");
    CMat ft = khatri_rao_set(cfg.m_t, cfg.n_s, tx.n_x, tx.n_y, "precoders");
    CMat wr = khatri_rao_set(cfg.m_r, cfg.n_s, rx.n_x, rx.n_y, "combiners");
    TrainingSet t;
    for (int m = 0; m < cfg.m_t; ++m) t.F.push_back(ft.middleCols(m * cfg.n_s, cfg.n_s));
    for (int m = 0; m < cfg.m_r; ++m) t.W.push_back(wr.middleCols(m * cfg.n_s, cfg.n_s));
    return t;
}

CMat qpsk_symbols(int n_s, int q, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double a = 1.0 / std::sqrt(2.0 * n_s);
    CMat s(n_s, q);
    for (int j = 0; j < q; ++j)
        for (int i = 0; i < n_s; ++i) {
            std::uint64_t r = rng();
            s(i, j) = cplx((r & 1) ? a : -a, (r & 2) ? a : -a);
        }
    return s;
}

CMat shifted_symbol_matrix(const CMat& s, int n_d) {
    const int ns = static_cast<int>(s.rows());
    const int q = static_cast<int>(s.cols());
    CMat S = CMat::Zero(static_cast<Eigen::Index>(n_d) * ns, q);
    for (int n = 0; n < n_d; ++n)
        for (int c = n; c < q; ++c) S.block(n * ns, c, ns, 1) = s.col(c - n);
    return S;
}

Whitened whiten(const CMat& W) {
    CMat g = W.adjoint() * W;
    Eigen::LLT<CMat> llt(g);
    if (llt.info() != Eigen::Success) throw SingularCombiner("W^H W is not positive definite");
    CMat L = llt.matrixL();
    double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < L.rows(); ++i) {
        double d = std::abs(L(i, i));
        dmax = std::max(dmax, d);
        dmin = std::min(dmin, d);
    }
    if (!(dmin > 1e-7 * dmax)) throw SingularCombiner("W^H W is rank deficient");
    Whitened out;
    out.L = L;
    // W_breve^H = L^{-1} W^H
    out.w_breve = L.triangularView<Eigen::Lower>().solve(W.adjoint()).adjoint();
    return out;
}

CMat sound(const ChannelTaps& taps, const CMat& F, const CMat& w_breve, const CMat& S,
           const SoundingConfig& cfg, std::mt19937_64& rng) {
    const int ns = static_cast<int>(F.cols());
    const int q = static_cast<int>(S.cols());
    const int nd = static_cast<int>(taps.taps.size());
    if (S.rows() != static_cast<Eigen::Index>(nd) * ns) throw ShapeMismatch("symbol matrix rows != n_d * n_s");
    CMat y = CMat::Zero(w_breve.cols(), q);
    const CMat wh = w_breve.adjoint();
    for (int n = 0; n < nd; ++n) {
        if (taps.taps[n].isZero(0.0)) continue;
        CMat g = wh * (taps.taps[n] * F);
        y.noalias() += g * S.middleRows(n * ns, ns);
    }
    y *= std::sqrt(cfg.p_t);
    if (cfg.noise_var > 0.0) {
        std::normal_distribution<double> nd01(0.0, std::sqrt(cfg.noise_var / 2.0));
        CMat noise(w_breve.rows(), q);
        for (Eigen::Index j = 0; j < noise.cols(); ++j)
            for (Eigen::Index i = 0; i < noise.rows(); ++i) {
                double re = nd01(rng);
                double im = nd01(rng);
                noise(i, j) = cplx(re, im);
            }
        y.noalias() += wh * noise;
    }
    return y;
}

ObservationMatrix assemble_observation(const std::vector<SoundingBlock>& blocks, int m_t, int m_r,
                                       std::vector<CMat> whitened_combiners) {
    if (blocks.empty()) throw ShapeMismatch("no sounding blocks");
    const Eigen::Index ns = blocks.front().y.rows();
    const Eigen::Index q = blocks.front().y.cols();
    if (static_cast<int>(blocks.size()) != m_t * m_r)
        throw ShapeMismatch("expected " + std::to_string(m_t * m_r) + " blocks");
    ObservationMatrix out;
    out.y_m = CMat::Zero(q * m_t, ns * m_r);
    std::vector<char> seen(static_cast<std::size_t>(m_t) * m_r, 0);
    for (const auto& b : blocks) {
        if (b.y.rows() != ns || b.y.cols() != q) throw ShapeMismatch("inconsistent block shape");
        if (b.m_t < 0 || b.m_t >= m_t || b.m_r < 0 || b.m_r >= m_r) throw ShapeMismatch("block index out of range");
        auto& flag = seen[static_cast<std::size_t>(b.m_t) * m_r + b.m_r];
        if (flag) throw ShapeMismatch("duplicate block");
        flag = 1;
        out.y_m.block(q * b.m_t, ns * b.m_r, q, ns) = b.y.transpose();
    }
    out.whitened_combiners = std::move(whitened_combiners);
    return out;
}

ObservationMatrix observe(const ChannelTaps& taps, const TrainingSet& train, const CMat& symbols,
                          const SoundingConfig& cfg) {
    const int nd = static_cast<int>(taps.taps.size());
    CMat S = shifted_symbol_matrix(symbols, nd);
    std::vector<CMat> wb;
    for (const auto& w : train.W) wb.push_back(whiten(w).w_breve);
    std::vector<SoundingBlock> blocks;
    const int mt = static_cast<int>(train.F.size());
    const int mr = static_cast<int>(train.W.size());
    for (int a = 0; a < mt; ++a)
        for (int b = 0; b < mr; ++b) {
            std::mt19937_64 rng(splitmix(cfg.rng_seed ^ splitmix(static_cast<std::uint64_t>(a) * mr + b)));
            blocks.push_back({a, b, sound(taps, train.F[a], wb[b], S, cfg, rng)});
        }
    return assemble_observation(blocks, mt, mr, std::move(wb));
}

void write_matrix(std::ostream& os, const CMat& m) {
    static_assert(std::endian::native == std::endian::little, "matrix IO assumes a little-endian host");
    put_u64(os, static_cast<std::uint64_t>(m.rows()));
    put_u64(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v[2] = {m(i, j).real(), m(i, j).imag()};
            os.write(reinterpret_cast<const char*>(v), sizeof v);
        }
}

CMat read_matrix(std::istream& is) {
    std::uint64_t r = get_u64(is);
    std::uint64_t c = get_u64(is);
    if (r > (1u << 24) || c > (1u << 24)) throw SchemaError("matrix header out of range");
    CMat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v[2];
            if (!is.read(reinterpret_cast<char*>(v), sizeof v)) throw SchemaError("matrix file truncated");
            m(i, j) = cplx(v[0], v[1]);
        }
    return m;
}

}  // namespace mmloc
