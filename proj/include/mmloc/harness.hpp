// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mmloc/classifier.hpp"
#include "mmloc/errors.hpp"
#include "mmloc/geoloc.hpp"
#include "mmloc/recovery.hpp"
#include "mmloc/refine.hpp"
#include "mmloc/scene.hpp"
#include "mmloc/sounding.hpp"

namespace mmloc {

class StageError : public Error {
public:
    StageError(std::string stage, const std::string& msg) : Error(stage + ": " + msg), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct RunConfig {
    SceneConfig scene;
    ChannelConfig channel;
    SoundingConfig sounding;
    RecoveryConfig recovery;
    QualifyConfig qualify;
    LocateOptions locate;
    TrainConfig train;
    MatchWeights match;
    RefineHeader refine;

    int scenes = 1000;
    int max_order = 2;
    double split_train = 0.6, split_val = 0.1, split_test = 0.3;
    std::uint64_t seed = 1;
    std::string out_dir = "mmloc_run";
    int workers = 1;
    bool noiseless = false;
    bool classifier_on_clean = false;  // train on true path parameters instead of estimates
    int window_guard = 2;               // taps before the first arrival

    // Noise: reference thermal power scaled by the array-gain ratio against
    // the reference array sizes, unless noise_var_override is set.
    double noise_dbm = -84.0;
    int ref_tx_elems = 256;
    int ref_rx_elems = 64;
    std::optional<double> noise_var_override;

    double noise_var() const;
};

// key = value lines; '#' starts a comment; "include other.cfg" is resolved
// relative to the including file.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);
void parse_config(std::istream& is, RunConfig& cfg, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig cfg = {});
void validate(const RunConfig& cfg);

struct CdfSummary {
    std::size_t n = 0;
    double p5 = 0.0, p50 = 0.0, p80 = 0.0, p95 = 0.0;
    double sub_meter = 0.0;  // fraction of errors below 1 m
};

// Linear interpolation between order statistics at position p (n - 1).
double quantile(std::vector<double> xs, double p);
CdfSummary error_cdf(const std::vector<double>& errors);

enum class Split { Train, Val, Test };
const char* split_name(Split s);
Split split_of(const RunConfig& cfg, long id);

// Runs fn(i) for i in [0, n) on `workers` threads. The first exception is rethrown.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

struct SceneSample {
    long id = 0;
    Scene scene;
    std::vector<PathRecord> paths;  // inside the tap window
    double t0 = 0.0;                // receiver window start, s
    int dropped = 0;
};

// Window start: two guard taps before the first arrival, shifted by the
// fractional part of the clock offset.
double window_start(const std::vector<PathRecord>& paths, double clock_offset_s, const ChannelConfig& ch,
                    int guard);

SceneSample simulate_scene(const RunConfig& cfg, long id);

// Training set, symbols, measurement tensor and dictionaries shared by all scenes.
struct Frontend {
    TrainingSet train;
    CMat symbols;
    MeasurementTensor phi;
    DictionarySet dict;

    explicit Frontend(const RunConfig& cfg);
};

ObservationMatrix sound_scene(const RunConfig& cfg, const Frontend& fe, const SceneSample& s);

std::vector<double> true_delays(const SceneSample& s);

struct EstimateSample {
    long id = 0;
    std::vector<EstimatedPath> paths;
    std::vector<int> labels;  // class of the matched true path
};

EstimateSample estimate_scene(const RunConfig& cfg, const Frontend& fe, const SceneSample& s,
                              const ObservationMatrix& obs);

struct LocateSample {
    long id = 0;
    Split split = Split::Test;
    Mode mode = Mode::UNLOCATABLE;
    bool los_present = false;  // ground truth
    Vec3 x_true = Vec3::Zero();
    Vec3 x_hat = Vec3::Zero();
    std::optional<double> d0_hat;
    double residual = 0.0;
    double err2d = 0.0, err3d = 0.0;
    std::optional<double> refined_err2d;
};

LocateSample locate_scene(const RunConfig& cfg, const SceneSample& s, const std::vector<EstimatedPath>& classified);

struct ModeReport {
    std::size_t qualified = 0;
    CdfSummary err2d, err3d;
    std::optional<CdfSummary> refined2d;
};

struct EvalReport {
    std::size_t scenes = 0;
    std::size_t evaluated = 0;  // scenes in the test split
    std::size_t unlocatable = 0;
    ModeReport los, nlos, all;
    double classifier_accuracy = 0.0;  // estimated paths of the test split
    Eigen::Matrix3i confusion = Eigen::Matrix3i::Zero();
};

EvalReport build_report(const std::vector<LocateSample>& located, const RunConfig& cfg);
void print_report(std::ostream& os, const EvalReport& r);
void write_report_json(std::ostream& os, const EvalReport& r);
// One row per error: mode, kind, error_m, cdf.
void write_cdf_csv(std::ostream& os, const std::vector<LocateSample>& located);

// Stage artifacts under cfg.out_dir.
namespace stage {
inline constexpr const char* kScenes = "scenes.jsonl";
inline constexpr const char* kSoundIndex = "sound.jsonl";
inline constexpr const char* kEstimates = "estimates.jsonl";
inline constexpr const char* kModel = "classifier.json";
inline constexpr const char* kClassified = "classified.jsonl";
inline constexpr const char* kLocations = "locations.jsonl";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kCdf = "cdf.csv";
inline constexpr const char* kRefineTrain = "refine_train.jsonl";

const std::vector<std::string>& names();  // pipeline order

std::vector<SceneSample> generate(const RunConfig& cfg);
void sound(const RunConfig& cfg);
void estimate(const RunConfig& cfg);
ClassifierParams classify(const RunConfig& cfg);
void locate(const RunConfig& cfg);
EvalReport eval(const RunConfig& cfg, std::ostream* print = nullptr);
void export_refine(const RunConfig& cfg);
EvalReport ingest_refine(const RunConfig& cfg, const std::filesystem::path& predictions, std::ostream* print = nullptr);

// Runs every stage from `from` through eval.
EvalReport run(const RunConfig& cfg, const std::string& from = "generate", std::ostream* print = nullptr);
}  // namespace stage

void write_estimates_jsonl(std::ostream& os, const std::vector<EstimateSample>& es);
std::vector<EstimateSample> read_estimates_jsonl(std::istream& is);
void write_locations_jsonl(std::ostream& os, const std::vector<LocateSample>& ls);
std::vector<LocateSample> read_locations_jsonl(std::istream& is);

}  // namespace mmloc
