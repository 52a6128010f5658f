// SPDX-License-Identifier: Apache-2.0
#include "mmloc/refine.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <unordered_map>

#include "json.hpp"
#include "mmloc/errors.hpp"

namespace mmloc {

using nlohmann::json;

Eigen::Vector2i TileGrid::offset(int j, int i) const {
    const int h = (n_g + 1) / 2;
    return {i - h, h - j};
}

Vec2 TileGrid::tile_center(int j, int i) const {
    Eigen::Vector2i o = offset(j, i);
    return center + g_s * o.cast<double>();
}

TileMap target_map(const TileGrid& grid, const Vec2& x_true, double gamma, double delta) {
    if (!(gamma > 0.0) || !(delta > 0.0)) throw DomainError("gamma and delta must be positive");
    if (grid.n_g < 1 || grid.n_g % 2 == 0) throw ConfigError("n_g must be a positive odd integer");
    TileMap m;
    m.grid = grid;
    m.values.reserve(static_cast<std::size_t>(grid.n_g) * grid.n_g);
    for (int j = 1; j <= grid.n_g; ++j)
        for (int i = 1; i <= grid.n_g; ++i) {
            double d = (grid.tile_center(j, i) - x_true).norm();
            m.values.push_back(1.0 / (1.0 + std::exp(-gamma * (1.0 - d / delta))));
        }
    return m;
}

Vec2 select_refined(const TileMap& map) {
    const int n = map.grid.n_g;
    if (static_cast<int>(map.values.size()) != n * n) throw ShapeMismatch("tile map size does not match grid");
    int bj = 1, bi = 1;
    double best = -1.0;
    int best_norm = 0;
    for (int j = 1; j <= n; ++j)
        for (int i = 1; i <= n; ++i) {
            double v = map.at(j, i);
            int nrm = map.grid.offset(j, i).squaredNorm();
            if (v > best || (v == best && nrm < best_norm)) {
                best = v;
                best_norm = nrm;
                bj = j;
                bi = i;
            }
        }
    return map.grid.tile_center(bj, bi);
}

namespace {

json header_json(const RefineHeader& h) {
    return {{"version", h.version}, {"n_g", h.n_g}, {"g_s", h.g_s}, {"gamma", h.gamma}, {"delta", h.delta},
            {"n_est", h.n_est}};
}

RefineHeader parse_header(const json& j) {
    RefineHeader h;
    try {
        h.version = j.at("version").get<int>();
        h.n_g = j.at("n_g").get<int>();
        h.g_s = j.at("g_s").get<double>();
        h.gamma = j.at("gamma").get<double>();
        h.delta = j.at("delta").get<double>();
        h.n_est = j.at("n_est").get<int>();
    } catch (const json::exception& e) {
        throw SchemaError(std::string("bad refine header: ") + e.what());
    }
    return h;
}

json parse_line(const std::string& line, long lineno) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
}

Vec2 vec2(const json& j) {
    if (!j.is_array() || j.size() != 2) throw SchemaError("expected a 2-element array");
    return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

void export_training_set(std::ostream& os, const std::vector<RefineRecord>& records, const RefineHeader& h,
                         const FeatureNorm& norm) {
    os << header_json(h).dump() << '\n';
    for (const auto& r : records) {
        json paths = json::array();
        for (int k = 0; k < h.n_est; ++k) {
            std::array<double, 6> row{};
            if (k < static_cast<int>(r.paths.size())) {
                Eigen::VectorXd z = norm.apply(path_features(r.paths[k]));
                for (int c = 0; c < 6; ++c) row[c] = z[c];
            }
            paths.push_back(row);
        }
        TileGrid g{r.x_init, h.n_g, h.g_s};
        TileMap t = target_map(g, r.x_true, h.gamma, h.delta);
        json rec = {{"id", r.id},
                    {"paths", paths},
                    {"x_init", {r.x_init.x(), r.x_init.y()}},
                    {"target", t.values},
                    {"x_true", {r.x_true.x(), r.x_true.y()}}};
        os << rec.dump() << '\n';
    }
    if (!os) throw Error("failed writing refine training set");
}

RefineHeader read_training_header(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw SchemaError("missing refine header");
    return parse_header(parse_line(line, 1));
}

std::vector<RefineRow> read_training_set(std::istream& is, RefineHeader* header) {
    RefineHeader h = read_training_header(is);
    if (header) *header = h;
    std::vector<RefineRow> out;
    std::string line;
    long lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = parse_line(line, lineno);
        RefineRow r;
        try {
            r.id = j.at("id").get<long>();
            r.paths = j.at("paths").get<std::vector<std::array<double, 6>>>();
            r.x_init = vec2(j.at("x_init"));
            r.target = j.at("target").get<std::vector<double>>();
            r.x_true = vec2(j.at("x_true"));
        } catch (const json::exception& e) {
            throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
        }
        if (static_cast<int>(r.paths.size()) != h.n_est || static_cast<int>(r.target.size()) != h.n_g * h.n_g)
            throw SchemaError("line " + std::to_string(lineno) + ": shape does not match header");
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<TileMap> import_predictions(std::istream& is, const std::vector<long>& ids,
                                        const std::vector<Vec2>& centers, const RefineHeader& h) {
    if (ids.size() != centers.size()) throw ShapeMismatch("ids and centers differ in length");
    const std::size_t n2 = static_cast<std::size_t>(h.n_g) * h.n_g;
    constexpr double lo = 1e-9, hi = 1.0 - 1e-9;
    std::unordered_map<long, std::vector<double>> by_id;
    std::string line;
    long lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = parse_line(line, lineno);
        if (j.contains("version")) continue;  // header
        long id;
        std::vector<double> map;
        try {
            id = j.at("id").get<long>();
            map = j.at("map").get<std::vector<double>>();
        } catch (const json::exception& e) {
            throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
        }
        if (map.size() != n2)
            throw SchemaError("line " + std::to_string(lineno) + ": map has " + std::to_string(map.size()) +
                              " values, expected " + std::to_string(n2));
        int clipped = 0;
        for (double& v : map) {
            if (std::isnan(v)) throw SchemaError("line " + std::to_string(lineno) + ": NaN in map");
            if (v < lo || v > hi) {
                v = std::clamp(v, lo, hi);
                ++clipped;
            }
        }
        if (clipped)
            warn(Warning::Clipped, "record " + std::to_string(id) + ": " + std::to_string(clipped) +
                                       " values clipped into (0,1)");
        if (!by_id.emplace(id, std::move(map)).second)
            throw SchemaError("duplicate prediction for id " + std::to_string(id));
    }
    std::vector<TileMap> out;
    out.reserve(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        auto it = by_id.find(ids[k]);
        if (it == by_id.end()) throw SchemaError("no prediction for id " + std::to_string(ids[k]));
        TileMap m;
        m.grid = TileGrid{centers[k], h.n_g, h.g_s};
        m.values = it->second;
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace mmloc
