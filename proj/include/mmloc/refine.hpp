// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <vector>

#include "mmloc/classifier.hpp"

namespace mmloc {

using Vec2 = Eigen::Vector2d;

// n_g x n_g candidate positions around center. Tiles are addressed (j, i),
// 1-based; row j = 1 is the top (largest y), column i = 1 the left (smallest x).
struct TileGrid {
    Vec2 center = Vec2::Zero();
    int n_g = 5;
    double g_s = 0.4;

    // [n_x, n_y] = [i - (n_g+1)/2, (n_g+1)/2 - j]
    Eigen::Vector2i offset(int j, int i) const;
    Vec2 tile_center(int j, int i) const;
};

// Row-major values, values[(j-1) * n_g + (i-1)]. Not normalized to sum 1.
struct TileMap {
    TileGrid grid;
    std::vector<double> values;

    double at(int j, int i) const { return values[static_cast<std::size_t>(j - 1) * grid.n_g + (i - 1)]; }
};

TileMap target_map(const TileGrid& grid, const Vec2& x_true, double gamma = 5.0, double delta = 1.0);

Vec2 select_refined(const TileMap& map);

struct RefineHeader {
    int version = 1;
    int n_g = 5;
    double g_s = 0.4;
    double gamma = 5.0;
    double delta = 1.0;
    int n_est = 5;
};

struct RefineRecord {
    long id = 0;
    std::vector<EstimatedPath> paths;
    Vec2 x_init = Vec2::Zero();
    Vec2 x_true = Vec2::Zero();
};

// One parsed line of the training-set file.
struct RefineRow {
    long id = 0;
    std::vector<std::array<double, 6>> paths;
    Vec2 x_init = Vec2::Zero();
    std::vector<double> target;
    Vec2 x_true = Vec2::Zero();
};

// Paths are normalized with norm; short lists are zero padded to n_est rows.
void export_training_set(std::ostream& os, const std::vector<RefineRecord>& records, const RefineHeader& h,
                         const FeatureNorm& norm);

RefineHeader read_training_header(std::istream& is);
std::vector<RefineRow> read_training_set(std::istream& is, RefineHeader* header = nullptr);

// Prediction file: optional header line, then {"id": n, "map": [n_g^2]} per line.
// Returns one map per entry of ids, in that order.
std::vector<TileMap> import_predictions(std::istream& is, const std::vector<long>& ids,
                                        const std::vector<Vec2>& centers, const RefineHeader& h);

}  // namespace mmloc
