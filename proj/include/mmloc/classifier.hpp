// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmloc/recovery.hpp"
#include "mmloc/scene.hpp"

namespace mmloc {

// Path classes: 1 LOS, 2 first-order reflection, 3 anything else.
inline constexpr int kClassLos = 1;
inline constexpr int kClassFirst = 2;
inline constexpr int kClassOther = 3;

int order_to_class(int order);

using Feature = std::array<double, 6>;

// [power dB, tau ns, doa azimuth, doa elevation, dod azimuth, dod elevation]
Feature path_features(double gain_mag, double tau_s, const Vec3& doa, const Vec3& dod);
Feature path_features(const EstimatedPath& p);

struct MatchWeights {
    double dod = 4.0;    // per unit of direction-vector distance
    double doa = 2.0;
    double delay = 1.0;  // per sample period
    double ts = 1e-9;
};

// Class label of the nearest true path for every estimate. true_tau holds the
// true paths' delays in the estimator's convention.
std::vector<int> match_to_true(const std::vector<EstimatedPath>& est, const std::vector<PathRecord>& truth,
                               const std::vector<double>& true_tau, const MatchWeights& w = {});

struct FeatureNorm {
    Feature lo{};
    Feature hi{};
    Eigen::VectorXd apply(const Feature& f) const;
};

FeatureNorm fit_norm(const std::vector<Feature>& xs);

struct DenseLayer {
    Eigen::MatrixXd W;
    Eigen::VectorXd b;
};

struct ClassifierParams {
    std::vector<DenseLayer> layers;
    FeatureNorm norm;
    int epochs_run = 0;
    double best_val_loss = 0.0;
    std::uint64_t seed = 0;
};

inline const std::vector<int> kDefaultWidths = {6, 64, 64, 32, 3};

ClassifierParams init_params(std::uint64_t seed, const std::vector<int>& widths = kDefaultWidths,
                             bool zero_last = false);

// z must already be normalized.
Eigen::Vector3d forward(const ClassifierParams& p, const Eigen::VectorXd& z);
Eigen::Vector3d forward_logits(const ClassifierParams& p, const Eigen::VectorXd& z);

// Normalizes the raw feature with p.norm, returns 1..3 (ties to the lowest class).
int classify(const ClassifierParams& p, const Feature& f);

double loss_weight(int c_true, int c_pred, double eta);
double weighted_ce_loss(const Eigen::Vector3d& prob, int c_true, int c_pred, double eta);

// Gradient of weighted_ce_loss w.r.t. every parameter for one sample; c_pred is
// held fixed (pass 0 to take it from the forward pass).
std::vector<DenseLayer> loss_gradient(const ClassifierParams& p, const Eigen::VectorXd& z, int c_true, double eta,
                                      int c_pred = 0);
double sample_loss(const ClassifierParams& p, const Eigen::VectorXd& z, int c_true, double eta, int c_pred);

struct Dataset {
    std::vector<Feature> x;
    std::vector<int> y;  // 1..3
};

struct TrainConfig {
    int max_epochs = 600;
    int batch = 64;
    double lr = 1e-3;
    double decay = 0.95;
    int decay_every = 200;
    int patience = 40;
    double eta = 0.2;
    std::uint64_t seed = 7;
    std::vector<int> widths = kDefaultWidths;
};

ClassifierParams train(const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                       std::vector<double>* train_curve = nullptr);

double mean_loss(const ClassifierParams& p, const Dataset& d, double eta);
double accuracy(const ClassifierParams& p, const Dataset& d);
// confusion(i, j) = count of true class i+1 predicted as j+1
Eigen::Matrix3i confusion(const ClassifierParams& p, const Dataset& d);

inline constexpr int kModelFormatVersion = 1;
void save_model(std::ostream& os, const ClassifierParams& p);
ClassifierParams load_model(std::istream& is);

}  // namespace mmloc
