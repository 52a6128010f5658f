// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mmloc/errors.hpp"
#include "mmloc/sounding.hpp"
#include "support.hpp"

using namespace mmloc;

namespace {

ChannelTaps random_taps(std::mt19937_64& rng, const ChannelConfig& ch, int n_paths) {
    std::vector<PathRecord> paths;
    for (int k = 0; k < n_paths; ++k) {
        PathRecord p;
        p.toa_s = mmtest::uniform(rng, 0.0, (ch.n_d - 2) * ch.ts);
        p.gain = mmtest::random_gain(rng, 0.5, 1.0);
        p.doa = mmtest::random_unit(rng);
        p.dod = mmtest::random_unit(rng);
        paths.push_back(p);
    }
    return channel_taps(paths, 0.0, ch);
}

CMat random_unitary(std::mt19937_64& rng, int n) {
    Eigen::HouseholderQR<CMat> qr(mmtest::random_cmat(rng, n, n));
    return qr.householderQ() * CMat::Identity(n, n);
}

}  // namespace

TEST_CASE("DFT codebook") {
    CHECK(dft_codebook(1)(0, 0) == cplx(1.0, 0.0));
    CMat c4 = dft_codebook(4);
    CHECK((c4.adjoint() * c4 - CMat::Identity(4, 4)).norm() < 1e-12);
    CMat c8 = dft_codebook(8);
    for (int r = 0; r < 8; ++r) CHECK(std::abs(c8(r, 0) - cplx(1.0 / std::sqrt(8.0), 0.0)) < 1e-15);
}

TEST_CASE("training set enumeration") {
    SoundingConfig cfg;
    cfg.m_t = 4;
    cfg.m_r = 1;
    cfg.n_s = 1;
    ArrayGeometry a22{2, 2};
    TrainingSet t = build_training_set(cfg, a22, a22);
    REQUIRE(t.F.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(t.F[i].col(0).norm() - 1.0) < 1e-12);
        for (std::size_t j = 0; j < i; ++j) CHECK((t.F[i] - t.F[j]).norm() > 0.5);
    }
    TrainingSet again = build_training_set(cfg, a22, a22);
    for (std::size_t i = 0; i < 4; ++i) CHECK(again.F[i] == t.F[i]);

    SoundingConfig desk;
    ChannelConfig ch;
    TrainingSet d = build_training_set(desk, ch.tx, ch.rx);
    CHECK(static_cast<int>(d.F.size()) == desk.m_t);
    CHECK(static_cast<int>(d.W.size()) == desk.m_r);
    for (const auto& f : d.F)
        for (Eigen::Index c = 0; c < f.cols(); ++c) CHECK(std::abs(f.col(c).norm() - 1.0) < 1e-12);

    cfg.m_t = 5;
    CHECK_THROWS_AS(build_training_set(cfg, a22, a22), ConfigError);
}

TEST_CASE("QPSK symbols and the shifted symbol matrix") {
    CMat s = qpsk_symbols(4, 20000, 9);
    for (Eigen::Index i = 0; i < s.size(); ++i) CHECK(std::abs(std::abs(s(i)) - 0.5) < 1e-15);
    CMat cov = s * s.adjoint() / 20000.0;
    CHECK((cov - CMat::Identity(4, 4) / 4.0).norm() < 0.02);
    CHECK(qpsk_symbols(4, 16, 9) == s.leftCols(16));

    CMat small = qpsk_symbols(2, 3, 1);
    CHECK(shifted_symbol_matrix(small, 1) == small);
    CMat S = shifted_symbol_matrix(small, 2);
    REQUIRE(S.rows() == 4);
    CHECK(S.block(2, 0, 2, 1).isZero(0.0));
    CHECK(S.block(2, 1, 2, 2) == small.leftCols(2));
    CHECK(S.topRows(2) == small);
}

TEST_CASE("whitening") {
    CMat q = dft_codebook(8).leftCols(3);
    Whitened w = whiten(q);
    CHECK((w.L - CMat::Identity(3, 3)).norm() < 1e-12);
    CHECK((w.w_breve - q).norm() < 1e-12);

    std::mt19937_64 rng(12);
    for (int k = 0; k < 50; ++k) {
        CMat W = mmtest::random_cmat(rng, 16, 4);
        Whitened r = whiten(W);
        CHECK((r.w_breve.adjoint() * r.w_breve - CMat::Identity(4, 4)).norm() < 1e-10);
        CHECK((W.adjoint() * W - r.L * r.L.adjoint()).norm() < 1e-10 * W.squaredNorm());
    }
    CMat deficient = mmtest::random_cmat(rng, 16, 3);
    deficient.col(2) = deficient.col(0) * cplx(2.0, -1.0);
    CHECK_THROWS_AS(whiten(deficient), SingularCombiner);
}

TEST_CASE("sound: zero input and aligned single path") {
    SoundingConfig cfg;
    cfg.noise_var = 0.0;
    cfg.n_s = 1;
    ChannelConfig ch;
    ch.tx = ArrayGeometry{4, 4};
    ch.rx = ArrayGeometry{2, 2};
    ch.n_d = 4;
    CMat s = qpsk_symbols(1, 8, 3);
    CMat S = shifted_symbol_matrix(s, ch.n_d);
    CMat F = dft_codebook(16).leftCols(1);
    CMat W = dft_codebook(4).leftCols(1);
    std::mt19937_64 rng(1);
    CHECK(sound(channel_taps({}, 0.0, ch), F, W, S, cfg, rng).isZero(0.0));

    PathRecord p;
    p.gain = cplx(3e-6, 4e-6);
    p.doa = Vec3::UnitX();
    p.dod = Vec3::UnitX();
    p.toa_s = 0.0;
    CMat y = sound(channel_taps({p}, 0.0, ch), F, W, S, cfg, rng);
    // broadside steering and the constant codewords give gains sqrt(16) and sqrt(4)
    CMat expect = std::sqrt(cfg.p_t) * p.gain * std::sqrt(16.0 * 4.0) * s;
    CHECK((y - expect).norm() < 1e-12 * expect.norm());
}

TEST_CASE("whitened noise covariance matches sigma^2 I") {
    SoundingConfig cfg;
    cfg.noise_var = 2.5e-3;
    ChannelConfig ch;
    std::mt19937_64 gen(21);
    CMat W = mmtest::random_cmat(gen, ch.rx.size(), 4);
    Whitened w = whiten(W);
    ChannelTaps zero = channel_taps({}, 0.0, ch);
    CMat s = qpsk_symbols(4, 100, 5);
    CMat S = shifted_symbol_matrix(s, ch.n_d);
    CMat F = dft_codebook(ch.tx.size()).leftCols(4);
    std::mt19937_64 rng(77);
    CMat acc = CMat::Zero(4, 4);
    int draws = 0;
    for (int k = 0; k < 100; ++k) {
        CMat y = sound(zero, F, w.w_breve, S, cfg, rng);
        acc += y * y.adjoint();
        draws += static_cast<int>(y.cols());
    }
    acc /= static_cast<double>(draws);
    CMat target = cfg.noise_var * CMat::Identity(4, 4);
    CHECK(draws == 10000);
    CHECK((acc - target).norm() < 0.05 * target.norm());
}

TEST_CASE("noiseless observation: linearity and re-whitening invariance") {
    SoundingConfig cfg;
    cfg.noise_var = 0.0;
    ChannelConfig ch;
    std::mt19937_64 rng(31);
    ChannelTaps a = random_taps(rng, ch, 2), b = random_taps(rng, ch, 3), ab = a;
    for (std::size_t n = 0; n < ab.taps.size(); ++n) ab.taps[n] += b.taps[n];
    TrainingSet t = build_training_set(cfg, ch.tx, ch.rx);
    CMat s = qpsk_symbols(cfg.n_s, cfg.q, 8);
    CMat ya = observe(a, t, s, cfg).y_m, yb = observe(b, t, s, cfg).y_m, yab = observe(ab, t, s, cfg).y_m;
    CHECK((yab - ya - yb).norm() < 1e-12 * yab.norm());

    CMat S = shifted_symbol_matrix(s, ch.n_d);
    CMat wb = whiten(t.W[0]).w_breve;
    std::mt19937_64 r1(1), r2(1);
    CMat y1 = sound(a, t.F[0], wb, S, cfg, r1);
    CMat y2 = sound(a, t.F[0], wb * random_unitary(rng, cfg.n_s), S, cfg, r2);
    CHECK(std::abs(y1.norm() - y2.norm()) < 1e-12 * y1.norm());
}

TEST_CASE("assemble_observation layout") {
    std::mt19937_64 rng(41);
    const int q = 5, ns = 2;
    CMat one = mmtest::random_cmat(rng, ns, q);
    auto single = assemble_observation({{0, 0, one}}, 1, 1, {});
    CHECK(single.y_m == one.transpose());

    const int mt = 3, mr = 2;
    std::vector<SoundingBlock> blocks;
    for (int a = 0; a < mt; ++a)
        for (int b = 0; b < mr; ++b) blocks.push_back({a, b, mmtest::random_cmat(rng, ns, q)});
    auto ref = assemble_observation(blocks, mt, mr, {});
    CHECK(ref.y_m.rows() == q * mt);
    CHECK(ref.y_m.cols() == ns * mr);
    for (const auto& bl : blocks) CHECK(ref.y_m.block(q * bl.m_t, ns * bl.m_r, q, ns) == bl.y.transpose());
    for (int k = 0; k < 10; ++k) {
        auto shuffled = blocks;
        std::shuffle(shuffled.begin(), shuffled.end(), rng);
        CHECK(assemble_observation(shuffled, mt, mr, {}).y_m == ref.y_m);
    }
    auto dup = blocks;
    dup.back() = dup.front();
    CHECK_THROWS_AS(assemble_observation(dup, mt, mr, {}), ShapeMismatch);
    blocks.pop_back();
    CHECK_THROWS_AS(assemble_observation(blocks, mt, mr, {}), ShapeMismatch);
    CHECK_THROWS_AS(assemble_observation({}, 1, 1, {}), ShapeMismatch);
}

TEST_CASE("matrix binary IO round trip") {
    std::mt19937_64 rng(51);
    CMat m = mmtest::random_cmat(rng, 7, 3);
    std::stringstream ss;
    write_matrix(ss, m);
    CMat back = read_matrix(ss);
    CHECK(back == m);
    std::string bytes;
    {
        std::stringstream s2;
        write_matrix(s2, m);
        bytes = s2.str();
    }
    std::stringstream cut(bytes.substr(0, bytes.size() - 4));
    CHECK_THROWS_AS(read_matrix(cut), SchemaError);
}
