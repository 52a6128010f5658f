// SPDX-License-Identifier: Apache-2.0
#include "mmloc/scene.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <string>

#include "json.hpp"
#include "mmloc/errors.hpp"

namespace mmloc {

namespace {

constexpr double kSegEps = 1e-9;

using json = nlohmann::json;

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j) {
    if (!j.is_array() || j.size() != 3) throw SchemaError("expected 3-vector");
    return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

bool inside(const Vec3& p, const Reflector& r) {
    Vec3 d = p - r.plane_point;
    Vec3 v = r.unit_normal.cross(r.axis);
    return std::abs(d.dot(r.axis)) <= r.half_u && std::abs(d.dot(v)) <= r.half_v;
}

bool leg_clear(const Vec3& a, const Vec3& b, const std::vector<Reflector>& refl, int skip_a, int skip_b) {
    for (int i = 0; i < static_cast<int>(refl.size()); ++i) {
        if (i == skip_a || i == skip_b) continue;
        if (segment_hits(a, b, refl[i])) return false;
    }
    return true;
}

// Sequences of reflector indices with no immediate repeats.
void enumerate(int n, int depth, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
    if (static_cast<int>(cur.size()) == depth) {
        out.push_back(cur);
        return;
    }
    for (int i = 0; i < n; ++i) {
        if (!cur.empty() && cur.back() == i) continue;
        cur.push_back(i);
        enumerate(n, depth, cur, out);
        cur.pop_back();
    }
}

}  // namespace

Vec3 mirror_point(const Vec3& p, const Reflector& r) {
    double d = (p - r.plane_point).dot(r.unit_normal);
    return p - 2.0 * d * r.unit_normal;
}

std::optional<double> segment_hits(const Vec3& a, const Vec3& b, const Reflector& r) {
    double da = (a - r.plane_point).dot(r.unit_normal);
    double db = (b - r.plane_point).dot(r.unit_normal);
    double den = da - db;
    if (den == 0.0) return std::nullopt;
    double t = da / den;
    if (t <= kSegEps || t >= 1.0 - kSegEps) return std::nullopt;
    Vec3 p = a + t * (b - a);
    if (!inside(p, r)) return std::nullopt;
    return t;
}

bool los_blocked(const Scene& scene) {
    return !leg_clear(scene.tx_position, scene.rx_position, scene.reflectors, -1, -1);
}

std::vector<PathRecord> trace_paths(const Scene& scene, int max_order) {
    if (max_order < 1 || max_order > 3) throw ConfigError("max_order must be 1, 2 or 3");
    const double lambda = kSpeedOfLight / kCarrierHz;
    const auto& refl = scene.reflectors;
    const Vec3& tx = scene.tx_position;
    const Vec3& rx = scene.rx_position;

    auto make = [&](const std::vector<Vec3>& pts, double loss_db, int order) {
        PathRecord p;
        Vec3 prev = tx;
        double len = 0.0;
        for (const auto& q : pts) {
            len += (q - prev).norm();
            prev = q;
        }
        len += (rx - prev).norm();
        p.toa_s = len / kSpeedOfLight;
        double amp = lambda / (4.0 * std::numbers::pi * len) * std::pow(10.0, -loss_db / 20.0);
        p.gain = std::polar(amp, -2.0 * std::numbers::pi * len / lambda);
        Vec3 first = pts.empty() ? rx : pts.front();
        Vec3 last = pts.empty() ? tx : pts.back();
        p.dod = (first - tx).normalized();
        p.doa = (last - rx).normalized();
        p.order = order;
        p.interaction_points = pts;
        return p;
    };

    std::vector<PathRecord> out;
    if (leg_clear(tx, rx, refl, -1, -1)) out.push_back(make({}, 0.0, 0));

    const int n = static_cast<int>(refl.size());
    for (int k = 1; k <= max_order; ++k) {
        std::vector<std::vector<int>> seqs;
        std::vector<int> cur;
        enumerate(n, k, cur, seqs);
        for (const auto& seq : seqs) {
            std::vector<Vec3> img(k + 1);
            img[0] = tx;
            for (int i = 0; i < k; ++i) img[i + 1] = mirror_point(img[i], refl[seq[i]]);

            std::vector<Vec3> pts(k);
            Vec3 target = rx;
            bool ok = true;
            for (int i = k; i >= 1 && ok; --i) {
                const Reflector& r = refl[seq[i - 1]];
                auto t = segment_hits(target, img[i], r);
                if (!t) {
                    ok = false;
                    break;
                }
                pts[i - 1] = target + *t * (img[i] - target);
                target = pts[i - 1];
            }
            if (!ok) continue;

            // legs: tx -> p1 -> ... -> pk -> rx
            if (!leg_clear(tx, pts[0], refl, seq[0], -1)) continue;
            for (int i = 0; i + 1 < k && ok; ++i)
                ok = leg_clear(pts[i], pts[i + 1], refl, seq[i], seq[i + 1]);
            if (!ok) continue;
            if (!leg_clear(pts[k - 1], rx, refl, seq[k - 1], -1)) continue;

            double loss = 0.0;
            for (int s : seq) loss += refl[s].reflection_loss_db;
            out.push_back(make(pts, loss, k));
        }
    }
    if (out.empty()) throw EmptyChannel("no propagation path between tx and rx");
    return out;
}

std::vector<double> relative_delays(const std::vector<PathRecord>& paths, double t0) {
    std::vector<double> tau;
    tau.reserve(paths.size());
    for (const auto& p : paths) tau.push_back(p.toa_s - t0);
    return tau;
}

std::optional<std::vector<double>> los_tdoas(const std::vector<PathRecord>& paths) {
    for (const auto& p : paths)
        if (p.order == 0) return relative_delays(paths, p.toa_s);
    return std::nullopt;
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
    std::mt19937_64 rng(seed);
    auto U = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };

    Scene s;
    s.rng_seed = seed;
    s.tx_position = cfg.tx_position;
    s.rx_position = Vec3(U(cfg.rx_x_min, cfg.rx_x_max), U(cfg.rx_y_min, cfg.rx_y_max),
                         U(cfg.rx_z_min, cfg.rx_z_max));

    double x_far = cfg.rx_x_max + 20.0;
    Reflector ground;
    ground.plane_point = Vec3(0.5 * (cfg.corridor_x_start + x_far), 0.0, 0.0);
    ground.unit_normal = Vec3::UnitZ();
    ground.axis = Vec3::UnitX();
    ground.half_u = 1e4;
    ground.half_v = 1e4;
    ground.reflection_loss_db = U(cfg.loss_db_min, cfg.loss_db_max);
    s.reflectors.push_back(ground);

    for (int side = 0; side < 2 && cfg.buildings_per_side > 0; ++side) {
        double sign = side == 0 ? 1.0 : -1.0;
        double x = cfg.corridor_x_start;
        for (int b = 0; b < cfg.buildings_per_side; ++b) {
            double len = U(cfg.building_len_min, cfg.building_len_max);
            double h = U(cfg.building_h_min, cfg.building_h_max);
            double y = sign * (cfg.wall_offset + U(-cfg.setback_jitter, cfg.setback_jitter));
            double yaw = U(-cfg.facade_yaw_max_deg, cfg.facade_yaw_max_deg) * std::numbers::pi / 180.0;
            Reflector w;
            w.plane_point = Vec3(x + 0.5 * len, y, 0.5 * h);
            w.unit_normal = Vec3(sign * std::sin(yaw), -sign * std::cos(yaw), 0.0);
            w.axis = Vec3(std::cos(yaw), std::sin(yaw), 0.0);
            w.half_u = 0.5 * len;
            w.half_v = 0.5 * h;
            w.reflection_loss_db = U(cfg.loss_db_min, cfg.loss_db_max);
            s.reflectors.push_back(w);
            x += len + U(cfg.gap_min, cfg.gap_max);
        }
    }

    // Billboard-like panel straddling the direct line.
    if (cfg.buildings_per_side > 0 && U(0.0, 1.0) < cfg.blocker_prob) {
        double f = U(0.3, 0.7);
        Vec3 c = s.tx_position + f * (s.rx_position - s.tx_position);
        double half_w = U(1.5, 3.0);
        double z_lo = std::max(0.05, c.z() - U(0.3, 1.5));
        double z_hi = c.z() + U(2.0, 4.0);
        Reflector p;
        p.plane_point = Vec3(c.x(), c.y() + U(-1.0, 1.0), 0.5 * (z_lo + z_hi));
        p.unit_normal = Vec3(-1.0, 0.0, 0.0);
        p.axis = Vec3::UnitY();
        p.half_u = half_w;
        p.half_v = 0.5 * (z_hi - z_lo);
        p.reflection_loss_db = U(cfg.loss_db_min, cfg.loss_db_max);
        s.reflectors.push_back(p);
    }

    s.clock_offset_s = U(0.0, cfg.clock_offset_max_s);
    return s;
}

void write_scene_jsonl(std::ostream& os, const Scene& scene, const std::vector<PathRecord>& paths) {
    json refl = json::array();
    for (const auto& r : scene.reflectors) {
        refl.push_back({{"point", vec_json(r.plane_point)},
                        {"normal", vec_json(r.unit_normal)},
                        {"axis", vec_json(r.axis)},
                        {"half", {r.half_u, r.half_v}},
                        {"loss_db", r.reflection_loss_db}});
    }
    json head = {{"type", "scene"},
                 {"seed", scene.rng_seed},
                 {"tx", vec_json(scene.tx_position)},
                 {"rx", vec_json(scene.rx_position)},
                 {"clock_offset_s", scene.clock_offset_s},
                 {"n_paths", paths.size()},
                 {"reflectors", refl}};
    os << head.dump() << '\n';
    for (const auto& p : paths) {
        json pts = json::array();
        for (const auto& q : p.interaction_points) pts.push_back(vec_json(q));
        json j = {{"gain_re", p.gain.real()}, {"gain_im", p.gain.imag()}, {"toa_s", p.toa_s},
                  {"doa", vec_json(p.doa)},   {"dod", vec_json(p.dod)},     {"order", p.order},
                  {"points", pts}};
        os << j.dump() << '\n';
    }
}

std::vector<SceneBundle> read_scene_jsonl(std::istream& is) {
    std::vector<SceneBundle> out;
    std::string line;
    std::size_t pending = 0;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError(std::string("scene jsonl: ") + e.what());
        }
        try {
            if (j.value("type", "") == "scene") {
                if (pending != 0) throw SchemaError("scene record truncated");
                SceneBundle b;
                b.scene.rng_seed = j.at("seed").get<std::uint64_t>();
                b.scene.tx_position = json_vec(j.at("tx"));
                b.scene.rx_position = json_vec(j.at("rx"));
                b.scene.clock_offset_s = j.at("clock_offset_s").get<double>();
                for (const auto& r : j.at("reflectors")) {
                    Reflector x;
                    x.plane_point = json_vec(r.at("point"));
                    x.unit_normal = json_vec(r.at("normal"));
                    x.axis = json_vec(r.at("axis"));
                    x.half_u = r.at("half")[0].get<double>();
                    x.half_v = r.at("half")[1].get<double>();
                    x.reflection_loss_db = r.at("loss_db").get<double>();
                    b.scene.reflectors.push_back(x);
                }
                pending = j.at("n_paths").get<std::size_t>();
                out.push_back(std::move(b));
                continue;
            }
            if (out.empty() || pending == 0) throw SchemaError("path record without scene header");
            PathRecord p;
            p.gain = cplx(j.at("gain_re").get<double>(), j.at("gain_im").get<double>());
            p.toa_s = j.at("toa_s").get<double>();
            p.doa = json_vec(j.at("doa"));
            p.dod = json_vec(j.at("dod"));
            p.order = j.at("order").get<int>();
            for (const auto& q : j.at("points")) p.interaction_points.push_back(json_vec(q));
            out.back().paths.push_back(std::move(p));
            --pending;
        } catch (const json::exception& e) {
            throw SchemaError(std::string("scene jsonl: ") + e.what());
        }
    }
    if (pending != 0) throw SchemaError("scene record truncated");
    return out;
}

}  // namespace mmloc
