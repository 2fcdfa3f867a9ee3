#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "config.hpp"
#include "csi_sim.hpp"
#include "meta.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "preprocess.hpp"

namespace metacsi::exp {

using prep::PreprocessedSample;
using SamplePtrs = std::vector<const PreprocessedSample*>;

/// Contiguous measurement indices {start, ..., start + count - 1}.
struct IndexSet {
    std::int64_t start = 0;
    std::int64_t count = 0;

    std::vector<std::int64_t> materialize() const;
};

struct LayoutEntry {
    std::string role;  // "ptr(u)", "val(u)", "adpt", "test" or "train"
    IndexSet range;
};
using Layout = std::vector<LayoutEntry>;

struct SampleSet {
    std::string role;
    std::vector<IndexSet> ranges;
    SamplePtrs samples;
};

/// Materializes each role (entries sharing a role are concatenated in layout
/// order). Every index must exist in `dataset`, and no index may belong to two
/// roles.
std::vector<SampleSet> make_splits(std::span<const PreprocessedSample> dataset, const Layout& layout);

enum class Method { pre, tl, meta };

Method parse_method(const std::string& name);
const char* method_name(Method m);
sim::LabelKind parse_task(const std::string& name);

/// Everything one experiment needs, resolved from a Config.
struct ExperimentSpec {
    sim::LabelKind task = sim::LabelKind::count;
    int n_classes = 6;  // count classes, or the sector count
    int n_people = 1;   // coords task
    int n_envs = 6;     // the last one is held out for adaptation and test
    int placements = 1; // distinct scenes per class (per environment for coords)

    std::size_t ptr_per_scene = 100;
    std::size_t val_per_scene = 100;
    std::size_t adapt_pool_per_scene = 50;
    std::size_t test_per_scene = 100;

    sim::SubcarrierGrid grid = sim::SubcarrierGrid::wifi_20mhz();
    sim::ArrayGeometry geometry;
    sim::OffsetSpec offsets;
    double room_min_m = 4.0;
    double room_max_m = 8.0;
    Point sector_room{4.8, 3.6};
    double sector_cell_m = 1.2;
    double wall_margin_m = 0.3;
    int n_scatterers = 6;
    int max_interferers = 1;
    int interferer_paths = 2;
    double interferer_power = 0.05;
    double reflectivity = 0.6;
    double doppler_max_hz = 5.0;
    // Environments share room, transceivers, scatterers and spots and differ
    // only in interference and offsets; otherwise each gets its own layout.
    bool shared_layout = false;

    prep::PreprocessConfig preprocess;
    nn::ArchConfig arch;
    meta::MetaConfig meta;
    meta::MetaConfig pre;

    std::vector<Method> methods{Method::pre, Method::tl, Method::meta};
    std::vector<bool> preprocessing{true, false};
    std::vector<int> n_adapt{10, 20, 50};
    std::vector<std::uint64_t> seeds;
    bool gnuplot = false;

    /// Effective configuration (defaults overlaid with the user's values).
    Config config;

    std::size_t scenes_per_env() const;
    std::size_t packets_per_scene() const;
    std::size_t n_scenes() const { return scenes_per_env() * static_cast<std::size_t>(n_envs); }

    static ExperimentSpec from_config(const Config& user);
};

/// Default configuration text, one documented key per line.
std::string default_config_text();

/// All scenes, environment-major: scene s = env * scenes_per_env + class * placements + placement.
std::vector<sim::SceneSpec> build_scenes(const ExperimentSpec& spec, std::uint64_t seed);

std::vector<sim::CsiPacket> generate(const ExperimentSpec& spec, std::uint64_t seed);

/// Preprocessed samples, or raw |h|/Re/Im matrices when `preprocessing` is false.
prep::BatchResult prepare(const ExperimentSpec& spec, std::span<const sim::CsiPacket> packets, bool preprocessing);

Layout make_layout(const ExperimentSpec& spec);

struct Splits {
    meta::TaskSet<PreprocessedSample> tasks;
    SamplePtrs train;       // union of every task's ptr and val sets
    SamplePtrs adapt_pool;  // held-out environment, scene-major
    SamplePtrs test;
};

Splits split(const ExperimentSpec& spec, std::span<const PreprocessedSample> dataset);

/// First n adaptation samples, drawn round-robin across the held-out scenes.
SamplePtrs adaptation_subset(const ExperimentSpec& spec, const Splits& splits, int n);

nn::ArchConfig resolved_arch(const ExperimentSpec& spec);

nn::ModelParams train_model(const ExperimentSpec& spec, const nn::Network& net, const Splits& splits, Method method,
                            std::uint64_t seed, meta::TrainingLog* log = nullptr);
nn::ModelParams adapt_model(const ExperimentSpec& spec, const nn::Network& net, const nn::ModelParams& trained,
                            const SamplePtrs& adapt_set, Method method);

struct CellResult {
    Method method = Method::meta;
    bool preprocessing = true;
    int n_adapt = 0;
    std::uint64_t seed = 0;
    metrics::MetricsReport report;
};

struct TrainingCurve {
    std::uint64_t seed = 0;
    bool preprocessing = true;
    std::string phase;  // "pretrain" or "meta"
    meta::TrainingLog log;
};

struct ExperimentResults {
    std::vector<CellResult> cells;
    std::vector<TrainingCurve> curves;
};

ExperimentResults run_experiment(const ExperimentSpec& spec, std::ostream* progress = nullptr);

/// Writes results.csv, results_by_seed.csv, confusion or CDF tables per cell,
/// training_log.csv, manifest.txt and optionally plot.gp into `out_dir`.
void write_reports(const ExperimentSpec& spec, const ExperimentResults& results, const std::filesystem::path& out_dir);

/// Mean metric over seeds for one cell (accuracy or RMSE).
double mean_metric(const ExperimentResults& results, Method method, bool preprocessing, int n_adapt);

}  // namespace metacsi::exp
