// SPDX-License-Identifier: Apache-2.0
#include "mmloc/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace mmloc {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + v + "'");
    }
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

template <class T>
Setter num(T RunConfig::*field) {
    return [field](RunConfig& c, const std::string& k, const std::string& v) {
        if constexpr (std::is_floating_point_v<T>)
            c.*field = to_double(k, v);
        else
            c.*field = static_cast<T>(to_int(k, v));
    };
}

#define MMLOC_D(expr) [](RunConfig& c, const std::string& k, const std::string& v) { expr = to_double(k, v); }
#define MMLOC_I(expr) [](RunConfig& c, const std::string& k, const std::string& v) { expr = static_cast<int>(to_int(k, v)); }

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"scenes", num(&RunConfig::scenes)},
        {"seed", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.seed = static_cast<std::uint64_t>(to_int(k, v));
         }},
        {"out_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
        {"workers", num(&RunConfig::workers)},
        {"max_order", num(&RunConfig::max_order)},
        {"split.train", num(&RunConfig::split_train)},
        {"split.val", num(&RunConfig::split_val)},
        {"split.test", num(&RunConfig::split_test)},
        {"noiseless", [](RunConfig& c, const std::string& k, const std::string& v) { c.noiseless = to_bool(k, v); }},
        {"classifier.clean", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.classifier_on_clean = to_bool(k, v);
         }},
        {"window_guard", num(&RunConfig::window_guard)},
        {"noise.dbm", num(&RunConfig::noise_dbm)},
        {"noise.ref_tx_elems", num(&RunConfig::ref_tx_elems)},
        {"noise.ref_rx_elems", num(&RunConfig::ref_rx_elems)},
        {"noise.var", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.noise_var_override = to_double(k, v);
         }},

        {"scene.rx_x_min", MMLOC_D(c.scene.rx_x_min)},
        {"scene.rx_x_max", MMLOC_D(c.scene.rx_x_max)},
        {"scene.rx_y_min", MMLOC_D(c.scene.rx_y_min)},
        {"scene.rx_y_max", MMLOC_D(c.scene.rx_y_max)},
        {"scene.rx_z_min", MMLOC_D(c.scene.rx_z_min)},
        {"scene.rx_z_max", MMLOC_D(c.scene.rx_z_max)},
        {"scene.wall_offset", MMLOC_D(c.scene.wall_offset)},
        {"scene.setback_jitter", MMLOC_D(c.scene.setback_jitter)},
        {"scene.facade_yaw_max_deg", MMLOC_D(c.scene.facade_yaw_max_deg)},
        {"scene.buildings_per_side", MMLOC_I(c.scene.buildings_per_side)},
        {"scene.loss_db_min", MMLOC_D(c.scene.loss_db_min)},
        {"scene.loss_db_max", MMLOC_D(c.scene.loss_db_max)},
        {"scene.blocker_prob", MMLOC_D(c.scene.blocker_prob)},
        {"scene.clock_offset_max_s", MMLOC_D(c.scene.clock_offset_max_s)},

        {"channel.tx_nx", MMLOC_I(c.channel.tx.n_x)},
        {"channel.tx_ny", MMLOC_I(c.channel.tx.n_y)},
        {"channel.rx_nx", MMLOC_I(c.channel.rx.n_x)},
        {"channel.rx_ny", MMLOC_I(c.channel.rx.n_y)},
        {"channel.n_d", MMLOC_I(c.channel.n_d)},
        {"channel.ts", MMLOC_D(c.channel.ts)},
        {"channel.beta", MMLOC_D(c.channel.beta)},
        {"channel.pulse_span", MMLOC_I(c.channel.pulse_span)},

        {"sounding.m_t", MMLOC_I(c.sounding.m_t)},
        {"sounding.m_r", MMLOC_I(c.sounding.m_r)},
        {"sounding.q", MMLOC_I(c.sounding.q)},
        {"sounding.n_s", MMLOC_I(c.sounding.n_s)},
        {"sounding.p_t", MMLOC_D(c.sounding.p_t)},

        {"recovery.k_res", MMLOC_I(c.recovery.k_res)},
        {"recovery.n_est", MMLOC_I(c.recovery.n_est)},
        {"recovery.n_iter", MMLOC_I(c.recovery.n_iter)},

        {"qualify.los_gap_db", MMLOC_D(c.qualify.los_gap_db)},
        {"qualify.nlos_atten_db", MMLOC_D(c.qualify.nlos_atten_db)},
        {"qualify.nlos_min_paths", MMLOC_I(c.qualify.nlos_min_paths)},

        {"locate.z_min", MMLOC_D(c.locate.z_min)},
        {"locate.z_max", MMLOC_D(c.locate.z_max)},
        {"locate.nlos_cap", MMLOC_I(c.locate.nlos_cap)},

        {"train.max_epochs", MMLOC_I(c.train.max_epochs)},
        {"train.batch", MMLOC_I(c.train.batch)},
        {"train.lr", MMLOC_D(c.train.lr)},
        {"train.decay", MMLOC_D(c.train.decay)},
        {"train.decay_every", MMLOC_I(c.train.decay_every)},
        {"train.patience", MMLOC_I(c.train.patience)},
        {"train.eta", MMLOC_D(c.train.eta)},
        {"train.seed", [](RunConfig& c, const std::string& k, const std::string& v) {
             c.train.seed = static_cast<std::uint64_t>(to_int(k, v));
         }},

        {"match.dod", MMLOC_D(c.match.dod)},
        {"match.doa", MMLOC_D(c.match.doa)},
        {"match.delay", MMLOC_D(c.match.delay)},

        {"refine.n_g", MMLOC_I(c.refine.n_g)},
        {"refine.g_s", MMLOC_D(c.refine.g_s)},
        {"refine.gamma", MMLOC_D(c.refine.gamma)},
        {"refine.delta", MMLOC_D(c.refine.delta)},
    };
    return table;
}

#undef MMLOC_D
#undef MMLOC_I

void parse_config_impl(std::istream& is, RunConfig& cfg, const fs::path& base, int depth) {
    if (depth > 16) throw ConfigError("include nesting too deep");
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        if (line.rfind("include", 0) == 0 && (line.size() == 7 || line[7] == ' ' || line[7] == '\t')) {
            fs::path p = trim(line.substr(7));
            if (p.empty()) throw ConfigError("line " + std::to_string(lineno) + ": include without a path");
            if (p.is_relative()) p = base / p;
            std::ifstream f(p);
            if (!f) throw ConfigError("cannot open included config " + p.string());
            parse_config_impl(f, cfg, p.parent_path(), depth + 1);
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 json_vec3(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

json cdf_json(const CdfSummary& c) {
    return {{"n", c.n}, {"p5", c.p5}, {"p50", c.p50}, {"p80", c.p80}, {"p95", c.p95}, {"sub_meter", c.sub_meter}};
}

json mode_json(const ModeReport& m) {
    json j = {{"qualified", m.qualified}, {"err2d", cdf_json(m.err2d)}, {"err3d", cdf_json(m.err3d)}};
    if (m.refined2d) j["refined2d"] = cdf_json(*m.refined2d);
    return j;
}

fs::path out_path(const RunConfig& cfg, const char* name) { return fs::path(cfg.out_dir) / name; }

std::ifstream open_in(const RunConfig& cfg, const char* name, const char* stage) {
    std::ifstream f(out_path(cfg, name), std::ios::binary);
    if (!f) throw StageError(stage, "missing artifact " + out_path(cfg, name).string());
    return f;
}

std::ofstream open_out(const RunConfig& cfg, const char* name, const char* stage) {
    fs::create_directories(cfg.out_dir);
    std::ofstream f(out_path(cfg, name), std::ios::binary);
    if (!f) throw StageError(stage, "cannot write " + out_path(cfg, name).string());
    return f;
}

// Wraps any library error with the stage name.
template <class F>
auto in_stage(const char* stage, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

std::vector<SceneSample> load_scenes(const RunConfig& cfg, const char* stage) {
    auto f = open_in(cfg, stage::kScenes, stage);
    auto bundles = read_scene_jsonl(f);
    std::vector<SceneSample> out;
    out.reserve(bundles.size());
    for (std::size_t i = 0; i < bundles.size(); ++i) {
        SceneSample s;
        s.id = static_cast<long>(i);
        s.scene = std::move(bundles[i].scene);
        s.paths = std::move(bundles[i].paths);
        s.t0 = window_start(s.paths, s.scene.clock_offset_s, cfg.channel, cfg.window_guard);
        out.push_back(std::move(s));
    }
    return out;
}

json path_json(const EstimatedPath& p) {
    json beta_re = json::array(), beta_im = json::array();
    for (Eigen::Index i = 0; i < p.beta.size(); ++i) {
        beta_re.push_back(p.beta[i].real());
        beta_im.push_back(p.beta[i].imag());
    }
    return {{"gain_mag", p.gain_mag}, {"gain_phase", p.gain_phase}, {"tdoa_s", p.tdoa_s},
            {"doa", vec3_json(p.doa)},  {"dod", vec3_json(p.dod)},       {"grid", p.grid},
            {"beta_re", beta_re},       {"beta_im", beta_im},            {"class", p.predicted_class}};
}

EstimatedPath json_path(const json& j) {
    EstimatedPath p;
    p.gain_mag = j.at("gain_mag").get<double>();
    p.gain_phase = j.at("gain_phase").get<double>();
    p.tdoa_s = j.at("tdoa_s").get<double>();
    p.doa = json_vec3(j.at("doa"));
    p.dod = json_vec3(j.at("dod"));
    p.grid = j.at("grid").get<std::array<int, 5>>();
    auto re = j.at("beta_re").get<std::vector<double>>();
    auto im = j.at("beta_im").get<std::vector<double>>();
    if (re.size() != im.size()) throw SchemaError("beta_re and beta_im differ in length");
    p.beta.resize(static_cast<Eigen::Index>(re.size()));
    for (std::size_t i = 0; i < re.size(); ++i) p.beta[static_cast<Eigen::Index>(i)] = {re[i], im[i]};
    p.predicted_class = j.at("class").get<int>();
    return p;
}

}  // namespace

double RunConfig::noise_var() const {
    if (noise_var_override) return *noise_var_override;
    double ref = std::pow(10.0, noise_dbm / 10.0) * 1e-3;
    double ratio = static_cast<double>(channel.tx.size()) * channel.rx.size() /
                   (static_cast<double>(ref_tx_elems) * ref_rx_elems);
    return ref * ratio;
}

void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& t = setters();
    auto it = t.find(key);
    if (it == t.end()) throw ConfigError("unknown config key '" + key + "'");
    if (value.empty()) throw ConfigError("empty value for '" + key + "'");
    it->second(cfg, key, value);
}

void parse_config(std::istream& is, RunConfig& cfg, const fs::path& base_dir) {
    parse_config_impl(is, cfg, base_dir, 0);
}

RunConfig load_config(const fs::path& path, RunConfig cfg) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config " + path.string());
    parse_config(f, cfg, path.parent_path());
    return cfg;
}

void validate(const RunConfig& c) {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw ConfigError(msg);
    };
    need(c.scenes >= 0, "scenes must be non-negative");
    need(c.workers >= 1, "workers must be >= 1");
    need(c.split_train >= 0 && c.split_val >= 0 && c.split_test >= 0, "split fractions must be non-negative");
    need(std::abs(c.split_train + c.split_val + c.split_test - 1.0) < 1e-9, "split fractions must sum to 1");
    need(c.channel.tx.n_x > 0 && c.channel.tx.n_y > 0 && c.channel.rx.n_x > 0 && c.channel.rx.n_y > 0,
         "array sizes must be positive");
    need(c.channel.n_d > 0 && c.channel.ts > 0, "n_d and ts must be positive");
    need(c.recovery.k_res >= 1 && c.recovery.n_est >= 1 && c.recovery.n_iter >= 0, "bad recovery settings");
    need(c.sounding.p_t > 0, "p_t must be positive");
    need(c.noise_var() >= 0, "noise variance must be non-negative");
    need(c.refine.n_g >= 1 && c.refine.n_g % 2 == 1, "refine.n_g must be odd");
    need(c.refine.g_s > 0 && c.refine.gamma > 0 && c.refine.delta > 0, "refine parameters must be positive");
    need(c.window_guard >= 0 && c.window_guard < c.channel.n_d, "window_guard out of range");
}

double quantile(std::vector<double> xs, double p) {
    if (xs.empty()) throw DomainError("quantile of an empty sample");
    std::sort(xs.begin(), xs.end());
    double pos = p * static_cast<double>(xs.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    std::size_t hi = std::min(lo + 1, xs.size() - 1);
    double f = pos - static_cast<double>(lo);
    return xs[lo] + f * (xs[hi] - xs[lo]);
}

CdfSummary error_cdf(const std::vector<double>& errors) {
    CdfSummary c;
    c.n = errors.size();
    if (errors.empty()) {
        c.p5 = c.p50 = c.p80 = c.p95 = c.sub_meter = std::numeric_limits<double>::quiet_NaN();
        return c;
    }
    std::vector<double> s = errors;
    std::sort(s.begin(), s.end());
    c.p5 = quantile(s, 0.05);
    c.p50 = quantile(s, 0.50);
    c.p80 = quantile(s, 0.80);
    c.p95 = quantile(s, 0.95);
    c.sub_meter = static_cast<double>(std::count_if(s.begin(), s.end(), [](double e) { return e < 1.0; })) /
                  static_cast<double>(s.size());
    return c;
}

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split split_of(const RunConfig& cfg, long id) {
    const double n = static_cast<double>(cfg.scenes);
    const auto n_train = static_cast<long>(std::floor(cfg.split_train * n + 1e-9));
    const auto n_val = static_cast<long>(std::floor((cfg.split_train + cfg.split_val) * n + 1e-9)) - n_train;
    if (id < n_train) return Split::Train;
    if (id < n_train + n_val) return Split::Val;
    return Split::Test;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first;
    std::mutex mu;
    auto body = [&] {
        for (std::size_t i = next++; i < n && !failed; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!first) first = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> pool;
    const auto w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    for (std::size_t t = 0; t < w; ++t) pool.emplace_back(body);
    for (auto& t : pool) t.join();
    if (first) std::rethrow_exception(first);
}

double window_start(const std::vector<PathRecord>& paths, double clock_offset_s, const ChannelConfig& ch, int guard) {
    if (paths.empty()) throw EmptyChannel("scene has no propagation paths");
    double t_first = paths.front().toa_s;
    for (const auto& p : paths) t_first = std::min(t_first, p.toa_s);
    return t_first - guard * ch.ts - std::fmod(clock_offset_s, ch.ts);
}

SceneSample simulate_scene(const RunConfig& cfg, long id) {
    SceneSample s;
    s.id = id;
    // A draw with no propagation path at all is replaced by the next draw.
    std::vector<PathRecord> all;
    const std::uint64_t base = mix(cfg.seed ^ mix(static_cast<std::uint64_t>(id)));
    for (int attempt = 0;; ++attempt) {
        s.scene = generate_scene(base + static_cast<std::uint64_t>(attempt) * 0x9e3779b97f4a7c15ULL, cfg.scene);
        try {
            all = trace_paths(s.scene, cfg.max_order);
            break;
        } catch (const EmptyChannel&) {
            if (attempt >= 15) throw;
        }
    }
    s.t0 = window_start(all, s.scene.clock_offset_s, cfg.channel, cfg.window_guard);
    const double limit = (cfg.channel.n_d - 1) * cfg.channel.ts;
    for (auto& p : all) {
        if (p.toa_s - s.t0 < limit)
            s.paths.push_back(std::move(p));
        else
            ++s.dropped;
    }
    return s;
}

Frontend::Frontend(const RunConfig& cfg) {
    train = build_training_set(cfg.sounding, cfg.channel.tx, cfg.channel.rx);
    symbols = qpsk_symbols(cfg.sounding.n_s, cfg.sounding.q, mix(cfg.seed ^ 0x5eedULL));
    phi = build_measurement_tensor(train.F, symbols, cfg.channel.n_d, cfg.channel.tx);
    dict = build_dictionaries(cfg.channel, cfg.recovery.k_res);
}

ObservationMatrix sound_scene(const RunConfig& cfg, const Frontend& fe, const SceneSample& s) {
    ChannelTaps taps = channel_taps(s.paths, s.t0, cfg.channel);
    SoundingConfig sc = cfg.sounding;
    sc.noise_var = cfg.noiseless ? 0.0 : cfg.noise_var();
    sc.rng_seed = mix(cfg.seed ^ mix(static_cast<std::uint64_t>(s.id) + 0x50u));
    return observe(taps, fe.train, fe.symbols, sc);
}

std::vector<double> true_delays(const SceneSample& s) { return relative_delays(s.paths, s.t0); }

EstimateSample estimate_scene(const RunConfig& cfg, const Frontend& fe, const SceneSample& s,
                              const ObservationMatrix& obs) {
    EstimateSample e;
    e.id = s.id;
    e.paths = estimate_channel(obs, fe.phi, fe.dict, cfg.channel, cfg.recovery, cfg.sounding.p_t);
    e.labels = match_to_true(e.paths, s.paths, true_delays(s), cfg.match);
    return e;
}

LocateSample locate_scene(const RunConfig& cfg, const SceneSample& s, const std::vector<EstimatedPath>& classified) {
    LocateSample r;
    r.id = s.id;
    r.split = split_of(cfg, s.id);
    r.x_true = s.scene.rx_position;
    r.los_present = std::any_of(s.paths.begin(), s.paths.end(), [](const PathRecord& p) { return p.order == 0; });
    QualifiedChannel q = qualify(classified, cfg.qualify);
    if (q.mode == Mode::UNLOCATABLE) return r;
    try {
        LocationEstimate e = locate(q, s.scene.tx_position, cfg.locate);
        r.mode = q.mode;
        r.x_hat = e.x_hat;
        r.d0_hat = e.d0_hat;
        r.residual = e.residual;
        r.err2d = (e.x_hat.head<2>() - r.x_true.head<2>()).norm();
        r.err3d = (e.x_hat - r.x_true).norm();
    } catch (const NoValidCombination&) {
        r.mode = Mode::UNLOCATABLE;
    }
    return r;
}

EvalReport build_report(const std::vector<LocateSample>& located, const RunConfig& cfg) {
    EvalReport r;
    r.scenes = static_cast<std::size_t>(cfg.scenes);
    std::vector<double> e2[3], e3[3], rf[3];
    for (const auto& l : located) {
        if (l.split != Split::Test) continue;
        ++r.evaluated;
        if (l.mode == Mode::UNLOCATABLE) {
            ++r.unlocatable;
            continue;
        }
        int m = l.mode == Mode::LOS ? 0 : 1;
        for (int k : {m, 2}) {
            e2[k].push_back(l.err2d);
            e3[k].push_back(l.err3d);
            if (l.refined_err2d) rf[k].push_back(*l.refined_err2d);
        }
    }
    ModeReport* out[3] = {&r.los, &r.nlos, &r.all};
    for (int k = 0; k < 3; ++k) {
        out[k]->qualified = e2[k].size();
        out[k]->err2d = error_cdf(e2[k]);
        out[k]->err3d = error_cdf(e3[k]);
        if (!rf[k].empty()) out[k]->refined2d = error_cdf(rf[k]);
    }
    return r;
}

void print_report(std::ostream& os, const EvalReport& r) {
    auto line = [&](const char* name, const ModeReport& m) {
        auto row = [&](const char* kind, const CdfSummary& c) {
            os << std::left << std::setw(5) << name << std::setw(10) << kind << std::right << std::setw(6) << c.n
               << std::fixed << std::setprecision(3) << std::setw(9) << c.p5 << std::setw(9) << c.p50
               << std::setw(9) << c.p80 << std::setw(9) << c.p95 << std::setw(9) << c.sub_meter << '\n';
        };
        row("2d", m.err2d);
        row("3d", m.err3d);
        if (m.refined2d) row("2d-refined", *m.refined2d);
    };
    os << "scenes " << r.scenes << ", test split " << r.evaluated << ", unlocatable " << r.unlocatable << '\n';
    os << "classifier accuracy on estimated test paths " << std::fixed << std::setprecision(4)
       << r.classifier_accuracy << '\n';
    os << "mode kind          n       p5      p50      p80      p95   p(<1m)\n";
    line("LOS", r.los);
    line("NLOS", r.nlos);
    line("all", r.all);
    os.unsetf(std::ios::floatfield);
}

void write_report_json(std::ostream& os, const EvalReport& r) {
    json conf = json::array();
    for (int i = 0; i < 3; ++i) conf.push_back({r.confusion(i, 0), r.confusion(i, 1), r.confusion(i, 2)});
    json j = {{"scenes", r.scenes},
              {"evaluated", r.evaluated},
              {"unlocatable", r.unlocatable},
              {"classifier_accuracy", r.classifier_accuracy},
              {"confusion", conf},
              {"los", mode_json(r.los)},
              {"nlos", mode_json(r.nlos)},
              {"all", mode_json(r.all)}};
    os << j.dump(2) << '\n';
}

void write_cdf_csv(std::ostream& os, const std::vector<LocateSample>& located) {
    os << "mode,kind,error_m,cdf\n";
    os << std::setprecision(17);
    for (Mode m : {Mode::LOS, Mode::NLOS}) {
        std::vector<double> e2, e3, rf;
        for (const auto& l : located) {
            if (l.split != Split::Test || l.mode != m) continue;
            e2.push_back(l.err2d);
            e3.push_back(l.err3d);
            if (l.refined_err2d) rf.push_back(*l.refined_err2d);
        }
        auto emit = [&](const char* kind, std::vector<double> v) {
            std::sort(v.begin(), v.end());
            for (std::size_t i = 0; i < v.size(); ++i)
                os << mode_name(m) << ',' << kind << ',' << v[i] << ','
                   << static_cast<double>(i + 1) / static_cast<double>(v.size()) << '\n';
        };
        emit("2d", e2);
        emit("3d", e3);
        emit("2d_refined", rf);
    }
}

void write_estimates_jsonl(std::ostream& os, const std::vector<EstimateSample>& es) {
    for (const auto& e : es) {
        json paths = json::array();
        for (const auto& p : e.paths) paths.push_back(path_json(p));
        os << json{{"id", e.id}, {"paths", paths}, {"labels", e.labels}}.dump() << '\n';
    }
}

std::vector<EstimateSample> read_estimates_jsonl(std::istream& is) {
    std::vector<EstimateSample> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            EstimateSample e;
            e.id = j.at("id").get<long>();
            for (const auto& p : j.at("paths")) e.paths.push_back(json_path(p));
            e.labels = j.at("labels").get<std::vector<int>>();
            if (e.labels.size() != e.paths.size()) throw SchemaError("labels and paths differ in length");
            out.push_back(std::move(e));
        } catch (const json::exception& ex) {
            throw SchemaError(std::string("estimates jsonl: ") + ex.what());
        }
    }
    return out;
}

void write_locations_jsonl(std::ostream& os, const std::vector<LocateSample>& ls) {
    for (const auto& l : ls) {
        json j = {{"id", l.id},
                  {"split", split_name(l.split)},
                  {"mode", mode_name(l.mode)},
                  {"los_present", l.los_present},
                  {"x_true", vec3_json(l.x_true)},
                  {"x_hat", vec3_json(l.x_hat)},
                  {"residual", l.residual},
                  {"err2d", l.err2d},
                  {"err3d", l.err3d}};
        if (l.d0_hat) j["d0_hat"] = *l.d0_hat;
        if (l.refined_err2d) j["refined_err2d"] = *l.refined_err2d;
        os << j.dump() << '\n';
    }
}

std::vector<LocateSample> read_locations_jsonl(std::istream& is) {
    std::vector<LocateSample> out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            LocateSample l;
            l.id = j.at("id").get<long>();
            auto sp = j.at("split").get<std::string>();
            l.split = sp == "train" ? Split::Train : sp == "val" ? Split::Val : Split::Test;
            auto md = j.at("mode").get<std::string>();
            l.mode = md == "LOS" ? Mode::LOS : md == "NLOS" ? Mode::NLOS : Mode::UNLOCATABLE;
            l.los_present = j.at("los_present").get<bool>();
            l.x_true = json_vec3(j.at("x_true"));
            l.x_hat = json_vec3(j.at("x_hat"));
            l.residual = j.at("residual").get<double>();
            l.err2d = j.at("err2d").get<double>();
            l.err3d = j.at("err3d").get<double>();
            if (j.contains("d0_hat")) l.d0_hat = j.at("d0_hat").get<double>();
            if (j.contains("refined_err2d")) l.refined_err2d = j.at("refined_err2d").get<double>();
            out.push_back(l);
        } catch (const json::exception& ex) {
            throw SchemaError(std::string("locations jsonl: ") + ex.what());
        }
    }
    return out;
}

namespace stage {

const std::vector<std::string>& names() {
    static const std::vector<std::string> n = {"generate", "sound", "estimate", "classify", "locate", "eval"};
    return n;
}

std::vector<SceneSample> generate(const RunConfig& cfg) {
    return in_stage("generate", [&] {
        validate(cfg);
        std::vector<SceneSample> out(static_cast<std::size_t>(cfg.scenes));
        parallel_for(out.size(), cfg.workers, [&](std::size_t i) { out[i] = simulate_scene(cfg, static_cast<long>(i)); });
        auto f = open_out(cfg, kScenes, "generate");
        for (const auto& s : out) write_scene_jsonl(f, s.scene, s.paths);
        return out;
    });
}

void sound(const RunConfig& cfg) {
    in_stage("sound", [&] {
        auto scenes = load_scenes(cfg, "sound");
        Frontend fe(cfg);
        fs::create_directories(fs::path(cfg.out_dir) / "sound");
        parallel_for(scenes.size(), cfg.workers, [&](std::size_t i) {
            ObservationMatrix obs = sound_scene(cfg, fe, scenes[i]);
            std::ofstream f(fs::path(cfg.out_dir) / "sound" / (std::to_string(scenes[i].id) + ".bin"),
                            std::ios::binary);
            write_matrix(f, obs.y_m);
            if (!f) throw Error("cannot write observation of scene " + std::to_string(scenes[i].id));
        });
        auto idx = open_out(cfg, kSoundIndex, "sound");
        for (const auto& s : scenes)
            idx << json{{"id", s.id}, {"t0", s.t0}, {"file", "sound/" + std::to_string(s.id) + ".bin"}}.dump()
                << '\n';
    });
}

void estimate(const RunConfig& cfg) {
    in_stage("estimate", [&] {
        auto scenes = load_scenes(cfg, "estimate");
        Frontend fe(cfg);
        std::vector<CMat> wb;
        for (const auto& w : fe.train.W) wb.push_back(whiten(w).w_breve);
        std::vector<EstimateSample> out(scenes.size());
        parallel_for(scenes.size(), cfg.workers, [&](std::size_t i) {
            std::ifstream f(fs::path(cfg.out_dir) / "sound" / (std::to_string(scenes[i].id) + ".bin"),
                            std::ios::binary);
            if (!f) throw Error("missing observation of scene " + std::to_string(scenes[i].id));
            ObservationMatrix obs;
            obs.y_m = read_matrix(f);
            obs.whitened_combiners = wb;
            out[i] = estimate_scene(cfg, fe, scenes[i], obs);
        });
        auto f = open_out(cfg, kEstimates, "estimate");
        write_estimates_jsonl(f, out);
    });
}

ClassifierParams classify(const RunConfig& cfg) {
    return in_stage("classify", [&] {
        auto f = open_in(cfg, kEstimates, "classify");
        auto est = read_estimates_jsonl(f);
        Dataset tr, va;
        if (cfg.classifier_on_clean) {
            for (const auto& s : load_scenes(cfg, "classify")) {
                Split sp = split_of(cfg, s.id);
                if (sp == Split::Test) continue;
                Dataset& d = sp == Split::Train ? tr : va;
                auto tau = true_delays(s);
                for (std::size_t k = 0; k < s.paths.size(); ++k) {
                    d.x.push_back(path_features(std::abs(s.paths[k].gain), tau[k], s.paths[k].doa, s.paths[k].dod));
                    d.y.push_back(order_to_class(s.paths[k].order));
                }
            }
        } else {
            for (const auto& e : est) {
                Split sp = split_of(cfg, e.id);
                if (sp == Split::Test) continue;
                Dataset& d = sp == Split::Train ? tr : va;
                for (std::size_t k = 0; k < e.paths.size(); ++k) {
                    d.x.push_back(path_features(e.paths[k]));
                    d.y.push_back(e.labels[k]);
                }
            }
        }
        if (tr.x.empty()) throw Error("no training samples for the classifier");
        if (va.x.empty()) va = tr;
        ClassifierParams model = train(tr, va, cfg.train);
        {
            auto mf = open_out(cfg, kModel, "classify");
            save_model(mf, model);
        }
        for (auto& e : est)
            for (auto& p : e.paths) p.predicted_class = mmloc::classify(model, path_features(p));
        auto out = open_out(cfg, kClassified, "classify");
        write_estimates_jsonl(out, est);
        return model;
    });
}

void locate(const RunConfig& cfg) {
    in_stage("locate", [&] {
        auto scenes = load_scenes(cfg, "locate");
        auto f = open_in(cfg, kClassified, "locate");
        auto est = read_estimates_jsonl(f);
        if (est.size() != scenes.size()) throw Error("estimate and scene counts differ");
        std::vector<LocateSample> out(scenes.size());
        parallel_for(scenes.size(), cfg.workers, [&](std::size_t i) {
            if (est[i].id != scenes[i].id) throw Error("estimate ids out of order");
            out[i] = locate_scene(cfg, scenes[i], est[i].paths);
        });
        auto o = open_out(cfg, kLocations, "locate");
        write_locations_jsonl(o, out);
    });
}

namespace {

EvalReport finish_report(const RunConfig& cfg, const std::vector<LocateSample>& located, std::ostream* print,
                         const char* stage_name) {
    auto f = open_in(cfg, kClassified, stage_name);
    auto est = read_estimates_jsonl(f);
    EvalReport r = build_report(located, cfg);
    std::size_t n = 0, hit = 0;
    for (const auto& e : est) {
        if (split_of(cfg, e.id) != Split::Test) continue;
        for (std::size_t k = 0; k < e.paths.size(); ++k) {
            int t = e.labels[k], p = e.paths[k].predicted_class;
            if (t < 1 || t > 3 || p < 1 || p > 3) continue;
            ++r.confusion(t - 1, p - 1);
            ++n;
            if (t == p) ++hit;
        }
    }
    r.classifier_accuracy = n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
    {
        auto o = open_out(cfg, kReport, stage_name);
        write_report_json(o, r);
        auto c = open_out(cfg, kCdf, stage_name);
        write_cdf_csv(c, located);
    }
    if (print) print_report(*print, r);
    return r;
}

}  // namespace

EvalReport eval(const RunConfig& cfg, std::ostream* print) {
    return in_stage("eval", [&] {
        auto f = open_in(cfg, kLocations, "eval");
        return finish_report(cfg, read_locations_jsonl(f), print, "eval");
    });
}

void export_refine(const RunConfig& cfg) {
    in_stage("export-refine", [&] {
        auto lf = open_in(cfg, kLocations, "export-refine");
        auto located = read_locations_jsonl(lf);
        auto ef = open_in(cfg, kClassified, "export-refine");
        auto est = read_estimates_jsonl(ef);
        auto mf = open_in(cfg, kModel, "export-refine");
        ClassifierParams model = load_model(mf);
        if (est.size() != located.size()) throw Error("estimate and location counts differ");
        std::vector<RefineRecord> recs;
        for (std::size_t i = 0; i < located.size(); ++i) {
            const auto& l = located[i];
            if (l.mode == Mode::UNLOCATABLE) continue;
            RefineRecord r;
            r.id = l.id;
            r.paths = est[i].paths;
            if (static_cast<int>(r.paths.size()) > cfg.refine.n_est) r.paths.resize(cfg.refine.n_est);
            r.x_init = l.x_hat.head<2>();
            r.x_true = l.x_true.head<2>();
            recs.push_back(std::move(r));
        }
        RefineHeader h = cfg.refine;
        h.n_est = cfg.recovery.n_est;
        auto o = open_out(cfg, kRefineTrain, "export-refine");
        export_training_set(o, recs, h, model.norm);
    });
}

EvalReport ingest_refine(const RunConfig& cfg, const fs::path& predictions, std::ostream* print) {
    return in_stage("ingest-refine", [&] {
        auto lf = open_in(cfg, kLocations, "ingest-refine");
        auto located = read_locations_jsonl(lf);
        std::vector<long> ids;
        std::vector<Vec2> centers;
        std::vector<std::size_t> where;
        for (std::size_t i = 0; i < located.size(); ++i) {
            if (located[i].mode == Mode::UNLOCATABLE) continue;
            ids.push_back(located[i].id);
            centers.push_back(located[i].x_hat.head<2>());
            where.push_back(i);
        }
        std::ifstream pf(predictions);
        if (!pf) throw Error("cannot open predictions " + predictions.string());
        RefineHeader h = cfg.refine;
        h.n_est = cfg.recovery.n_est;
        auto maps = import_predictions(pf, ids, centers, h);
        for (std::size_t k = 0; k < maps.size(); ++k) {
            auto& l = located[where[k]];
            l.refined_err2d = (select_refined(maps[k]) - l.x_true.head<2>()).norm();
        }
        {
            auto o = open_out(cfg, kLocations, "ingest-refine");
            write_locations_jsonl(o, located);
        }
        return finish_report(cfg, located, print, "ingest-refine");
    });
}

EvalReport run(const RunConfig& cfg, const std::string& from, std::ostream* print) {
    const auto& n = names();
    auto it = std::find(n.begin(), n.end(), from);
    if (it == n.end()) throw ConfigError("unknown stage '" + from + "'");
    auto start = static_cast<std::size_t>(it - n.begin());
    validate(cfg);
    if (start <= 0) generate(cfg);
    if (start <= 1) sound(cfg);
    if (start <= 2) estimate(cfg);
    if (start <= 3) classify(cfg);
    if (start <= 4) locate(cfg);
    return eval(cfg, print);
}

}  // namespace stage

}  // namespace mmloc
