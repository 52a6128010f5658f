// SPDX-License-Identifier: Apache-2.0
#include "mmloc/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "json.hpp"
#include "mmloc/channel.hpp"
#include "mmloc/errors.hpp"

namespace mmloc {

namespace {

constexpr double kProbFloor = 1e-12;

using json = nlohmann::json;

struct Batch {
    std::vector<Eigen::MatrixXd> act;  // act[0] = input, act[k] = post-ReLU of layer k
    Eigen::MatrixXd prob;              // 3 x B
};

Eigen::MatrixXd softmax_cols(const Eigen::MatrixXd& z) {
    Eigen::MatrixXd p(z.rows(), z.cols());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
        Eigen::VectorXd e = (z.col(j).array() - z.col(j).maxCoeff()).exp();
        p.col(j) = e / e.sum();
    }
    return p;
}

Batch run(const ClassifierParams& p, const Eigen::MatrixXd& x) {
    Batch b;
    b.act.push_back(x);
    const std::size_t L = p.layers.size();
    for (std::size_t k = 0; k < L; ++k) {
        Eigen::MatrixXd z = p.layers[k].W * b.act.back();
        z.colwise() += p.layers[k].b;
        if (k + 1 < L) {
            b.act.push_back(z.cwiseMax(0.0));
        } else {
            b.prob = softmax_cols(z);
        }
    }
    return b;
}

int argmax_class(const Eigen::VectorXd& p) {
    int best = 0;
    for (int i = 1; i < p.size(); ++i)
        if (p[i] > p[best]) best = i;
    return best + 1;
}

// Gradients for a batch; dlogits already holds per-sample weight * (p - onehot) / B.
std::vector<DenseLayer> backprop(const ClassifierParams& p, const Batch& b, Eigen::MatrixXd dz) {
    const std::size_t L = p.layers.size();
    std::vector<DenseLayer> g(L);
    for (std::size_t k = L; k-- > 0;) {
        g[k].W = dz * b.act[k].transpose();
        g[k].b = dz.rowwise().sum();
        if (k == 0) break;
        Eigen::MatrixXd da = p.layers[k].W.transpose() * dz;
        dz = (b.act[k].array() > 0.0).select(da, 0.0);
    }
    return g;
}

Eigen::MatrixXd to_matrix(const ClassifierParams& p, const Dataset& d, const std::vector<std::size_t>& idx,
                          std::size_t from, std::size_t to) {
    Eigen::MatrixXd x(6, static_cast<Eigen::Index>(to - from));
    for (std::size_t i = from; i < to; ++i) x.col(static_cast<Eigen::Index>(i - from)) = p.norm.apply(d.x[idx[i]]);
    return x;
}

json mat_json(const Eigen::MatrixXd& m) {
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(m(i, j));
    return a;
}

}  // namespace

int order_to_class(int order) {
    if (order <= 0) return kClassLos;
    if (order == 1) return kClassFirst;
    return kClassOther;
}

Feature path_features(double gain_mag, double tau_s, const Vec3& doa, const Vec3& dod) {
    Eigen::Vector2d a = angles_from_unit(doa);
    Eigen::Vector2d d = angles_from_unit(dod);
    double pdb = 10.0 * std::log10(std::max(gain_mag * gain_mag, 1e-30));
    return {pdb, tau_s * 1e9, a[0], a[1], d[0], d[1]};
}

Feature path_features(const EstimatedPath& p) { return path_features(p.gain_mag, p.tdoa_s, p.doa, p.dod); }

std::vector<int> match_to_true(const std::vector<EstimatedPath>& est, const std::vector<PathRecord>& truth,
                               const std::vector<double>& true_tau, const MatchWeights& w) {
    if (truth.size() != true_tau.size()) throw ShapeMismatch("truth and delay lists differ in length");
    std::vector<int> out;
    if (truth.empty()) return out;
    for (const auto& e : est) {
        double best = std::numeric_limits<double>::infinity();
        int cls = kClassOther;
        for (std::size_t i = 0; i < truth.size(); ++i) {
            double d = w.dod * (e.dod - truth[i].dod).norm() + w.doa * (e.doa - truth[i].doa).norm() +
                       w.delay * std::abs(e.tdoa_s - true_tau[i]) / w.ts;
            if (d < best) {
                best = d;
                cls = order_to_class(truth[i].order);
            }
        }
        out.push_back(cls);
    }
    return out;
}

Eigen::VectorXd FeatureNorm::apply(const Feature& f) const {
    Eigen::VectorXd z(6);
    for (int i = 0; i < 6; ++i) {
        double span = hi[i] - lo[i];
        z[i] = span > 0.0 ? (f[i] - lo[i]) / span : 0.0;
    }
    return z;
}

FeatureNorm fit_norm(const std::vector<Feature>& xs) {
    FeatureNorm n;
    n.lo.fill(std::numeric_limits<double>::infinity());
    n.hi.fill(-std::numeric_limits<double>::infinity());
    for (const auto& f : xs)
        for (int i = 0; i < 6; ++i) {
            n.lo[i] = std::min(n.lo[i], f[i]);
            n.hi[i] = std::max(n.hi[i], f[i]);
        }
    if (xs.empty()) {
        n.lo.fill(0.0);
        n.hi.fill(1.0);
    }
    return n;
}

ClassifierParams init_params(std::uint64_t seed, const std::vector<int>& widths, bool zero_last) {
    if (widths.size() < 2) throw ConfigError("need at least input and output widths");
    ClassifierParams p;
    p.seed = seed;
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
        DenseLayer l;
        l.W.resize(widths[k + 1], widths[k]);
        l.b = Eigen::VectorXd::Zero(widths[k + 1]);
        std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / widths[k]));
        for (Eigen::Index i = 0; i < l.W.size(); ++i) l.W.data()[i] = nd(rng);
        p.layers.push_back(std::move(l));
    }
    if (zero_last) p.layers.back().W.setZero();
    p.norm.lo.fill(0.0);
    p.norm.hi.fill(1.0);
    return p;
}

Eigen::Vector3d forward_logits(const ClassifierParams& p, const Eigen::VectorXd& z) {
    Eigen::VectorXd a = z;
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        Eigen::VectorXd h = p.layers[k].W * a + p.layers[k].b;
        a = k + 1 < p.layers.size() ? Eigen::VectorXd(h.cwiseMax(0.0)) : h;
    }
    return a;
}

Eigen::Vector3d forward(const ClassifierParams& p, const Eigen::VectorXd& z) {
    Eigen::Vector3d l = forward_logits(p, z);
    Eigen::Vector3d e = (l.array() - l.maxCoeff()).exp();
    return e / e.sum();
}

int classify(const ClassifierParams& p, const Feature& f) { return argmax_class(forward(p, p.norm.apply(f))); }

double loss_weight(int c_true, int c_pred, double eta) { return std::exp(-eta * (c_true - c_pred)); }

double weighted_ce_loss(const Eigen::Vector3d& prob, int c_true, int c_pred, double eta) {
    if (c_true < 1 || c_true > 3) throw DomainError("class label out of range");
    double pt = prob[c_true - 1];
    if (!(pt >= 0.0)) throw DomainError("probability is not a number");
    return loss_weight(c_true, c_pred, eta) * -std::log(std::max(pt, kProbFloor));
}

double sample_loss(const ClassifierParams& p, const Eigen::VectorXd& z, int c_true, double eta, int c_pred) {
    return weighted_ce_loss(forward(p, z), c_true, c_pred, eta);
}

std::vector<DenseLayer> loss_gradient(const ClassifierParams& p, const Eigen::VectorXd& z, int c_true, double eta,
                                      int c_pred) {
    Batch b = run(p, z);
    Eigen::VectorXd prob = b.prob.col(0);
    if (c_pred == 0) c_pred = argmax_class(prob);
    double w = loss_weight(c_true, c_pred, eta);
    Eigen::MatrixXd dz = prob;
    if (prob[c_true - 1] > kProbFloor) {
        dz(c_true - 1, 0) -= 1.0;
        dz *= w;
    } else {
        dz.setZero();  // clamped region: loss is flat
    }
    return backprop(p, b, dz);
}

double mean_loss(const ClassifierParams& p, const Dataset& d, double eta) {
    if (d.x.empty()) return 0.0;
    std::vector<std::size_t> idx(d.x.size());
    std::iota(idx.begin(), idx.end(), 0);
    Batch b = run(p, to_matrix(p, d, idx, 0, idx.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        Eigen::Vector3d pr = b.prob.col(static_cast<Eigen::Index>(i));
        s += weighted_ce_loss(pr, d.y[i], argmax_class(pr), eta);
    }
    return s / static_cast<double>(idx.size());
}

Eigen::Matrix3i confusion(const ClassifierParams& p, const Dataset& d) {
    Eigen::Matrix3i c = Eigen::Matrix3i::Zero();
    for (std::size_t i = 0; i < d.x.size(); ++i) c(d.y[i] - 1, classify(p, d.x[i]) - 1) += 1;
    return c;
}

double accuracy(const ClassifierParams& p, const Dataset& d) {
    if (d.x.empty()) return 0.0;
    Eigen::Matrix3i c = confusion(p, d);
    return static_cast<double>(c.trace()) / static_cast<double>(d.x.size());
}

ClassifierParams train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                       std::vector<double>* train_curve) {
    if (train_set.x.empty()) throw ConfigError("empty training set");
    ClassifierParams p = init_params(cfg.seed, cfg.widths);
    p.norm = fit_norm(train_set.x);

    const std::size_t L = p.layers.size();
    std::vector<DenseLayer> m(L), v(L);
    for (std::size_t k = 0; k < L; ++k) {
        m[k].W = Eigen::MatrixXd::Zero(p.layers[k].W.rows(), p.layers[k].W.cols());
        m[k].b = Eigen::VectorXd::Zero(p.layers[k].b.size());
        v[k] = m[k];
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    long step = 0;

    std::mt19937_64 rng(cfg.seed ^ 0x5bd1e995ULL);
    std::vector<std::size_t> idx(train_set.x.size());
    std::iota(idx.begin(), idx.end(), 0);

    ClassifierParams best = p;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    double lr = cfg.lr;
    const Dataset& monitor = val_set.x.empty() ? train_set : val_set;

    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        if (epoch > 0 && cfg.decay_every > 0 && epoch % cfg.decay_every == 0) lr *= cfg.decay;
        std::shuffle(idx.begin(), idx.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t from = 0; from < idx.size(); from += cfg.batch) {
            std::size_t to = std::min(idx.size(), from + static_cast<std::size_t>(cfg.batch));
            Batch b = run(p, to_matrix(p, train_set, idx, from, to));
            const double inv = 1.0 / static_cast<double>(to - from);
            Eigen::MatrixXd dz = b.prob;
            for (std::size_t i = from; i < to; ++i) {
                Eigen::Index c = static_cast<Eigen::Index>(i - from);
                int ct = train_set.y[idx[i]];
                Eigen::Vector3d pr = b.prob.col(c);
                int cp = argmax_class(pr);
                double w = loss_weight(ct, cp, cfg.eta);
                epoch_loss += weighted_ce_loss(pr, ct, cp, cfg.eta);
                if (pr[ct - 1] > kProbFloor) {
                    dz(ct - 1, c) -= 1.0;
                    dz.col(c) *= w * inv;
                } else {
                    dz.col(c).setZero();
                }
            }
            auto g = backprop(p, b, dz);
            ++step;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
            for (std::size_t k = 0; k < L; ++k) {
                m[k].W = b1 * m[k].W + (1.0 - b1) * g[k].W;
                v[k].W = b2 * v[k].W + (1.0 - b2) * g[k].W.cwiseAbs2();
                m[k].b = b1 * m[k].b + (1.0 - b1) * g[k].b;
                v[k].b = b2 * v[k].b + (1.0 - b2) * g[k].b.cwiseAbs2();
                p.layers[k].W.array() -= lr * (m[k].W.array() / c1) / ((v[k].W.array() / c2).sqrt() + eps);
                p.layers[k].b.array() -= lr * (m[k].b.array() / c1) / ((v[k].b.array() / c2).sqrt() + eps);
            }
        }
        if (train_curve) train_curve->push_back(epoch_loss / static_cast<double>(idx.size()));
        double vl = mean_loss(p, monitor, cfg.eta);
        p.epochs_run = epoch + 1;
        if (vl < best_val) {
            best_val = vl;
            best = p;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    best.epochs_run = p.epochs_run;
    best.best_val_loss = best_val;
    return best;
}

void save_model(std::ostream& os, const ClassifierParams& p) {
    json layers = json::array();
    for (const auto& l : p.layers)
        layers.push_back({{"rows", l.W.rows()}, {"cols", l.W.cols()}, {"W", mat_json(l.W)}, {"b", mat_json(l.b)}});
    json j = {{"format_version", kModelFormatVersion},
              {"layers", layers},
              {"norm_lo", p.norm.lo},
              {"norm_hi", p.norm.hi},
              {"epochs_run", p.epochs_run},
              {"best_val_loss", p.best_val_loss},
              {"seed", p.seed}};
    os << j.dump() << '\n';
}

ClassifierParams load_model(std::istream& is) {
    json j;
    try {
        is >> j;
        if (j.at("format_version").get<int>() != kModelFormatVersion) throw SchemaError("unsupported model version");
        ClassifierParams p;
        for (const auto& l : j.at("layers")) {
            DenseLayer d;
            const int r = l.at("rows").get<int>(), c = l.at("cols").get<int>();
            const auto& w = l.at("W");
            const auto& b = l.at("b");
            if (static_cast<int>(w.size()) != r * c || static_cast<int>(b.size()) != r) throw SchemaError("layer shape");
            d.W.resize(r, c);
            d.b.resize(r);
            for (int i = 0; i < r; ++i) {
                d.b[i] = b[i].get<double>();
                for (int k = 0; k < c; ++k) d.W(i, k) = w[i * c + k].get<double>();
            }
            p.layers.push_back(std::move(d));
        }
        p.norm.lo = j.at("norm_lo").get<Feature>();
        p.norm.hi = j.at("norm_hi").get<Feature>();
        p.epochs_run = j.value("epochs_run", 0);
        p.best_val_loss = j.value("best_val_loss", 0.0);
        p.seed = j.value("seed", std::uint64_t{0});
        return p;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("model file: ") + e.what());
    }
}

}  // namespace mmloc
