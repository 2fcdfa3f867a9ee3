#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <unordered_map>

#include "rng.hpp"

namespace metacsi::exp {

std::vector<std::int64_t> IndexSet::materialize() const {
    if (count < 0) fail(ErrorKind::invalid_argument, "index set count must be >= 0");
    std::vector<std::int64_t> out(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = start + i;
    return out;
}

std::vector<SampleSet> make_splits(std::span<const PreprocessedSample> dataset, const Layout& layout) {
    std::unordered_map<std::int64_t, const PreprocessedSample*> by_index;
    by_index.reserve(dataset.size());
    for (const auto& s : dataset) by_index.emplace(s.index, &s);

    std::vector<SampleSet> sets;
    std::map<std::string, std::size_t> slot;
    std::unordered_map<std::int64_t, std::size_t> owner;
    for (const LayoutEntry& e : layout) {
        auto [it, fresh] = slot.emplace(e.role, sets.size());
        if (fresh) sets.push_back({e.role, {}, {}});
        SampleSet& set = sets[it->second];
        set.ranges.push_back(e.range);
        for (std::int64_t idx : e.range.materialize()) {
            auto [o, inserted] = owner.emplace(idx, it->second);
            if (!inserted && o->second != it->second) {
                fail(ErrorKind::data, "index " + std::to_string(idx) + " appears in both " + sets[o->second].role +
                                          " and " + e.role);
            }
            if (!inserted) fail(ErrorKind::data, "index " + std::to_string(idx) + " listed twice in " + e.role);
            auto s = by_index.find(idx);
            if (s == by_index.end()) {
                fail(ErrorKind::data, "role " + e.role + " needs index " + std::to_string(idx) +
                                          ", which the dataset does not contain");
            }
            set.samples.push_back(s->second);
        }
    }
    return sets;
}

Method parse_method(const std::string& name) {
    if (name == "pre") return Method::pre;
    if (name == "tl") return Method::tl;
    if (name == "meta") return Method::meta;
    fail(ErrorKind::config, "unknown method '" + name + "' (expected pre, tl or meta)");
}

const char* method_name(Method m) {
    switch (m) {
        case Method::pre: return "pre";
        case Method::tl: return "tl";
        case Method::meta: return "meta";
    }
    return "?";
}

sim::LabelKind parse_task(const std::string& name) {
    if (name == "count") return sim::LabelKind::count;
    if (name == "sector") return sim::LabelKind::sector;
    if (name == "coords") return sim::LabelKind::coords;
    fail(ErrorKind::config, "unknown task '" + name + "' (expected count, sector or coords)");
}

namespace {

struct KeyDefault {
    const char* key;
    const char* value;  // empty: no default, key is optional
    const char* note;
};

const std::vector<KeyDefault>& key_table() {
    static const std::vector<KeyDefault> table = {
        {"experiment.task", "count", "count | sector | coords"},
        {"experiment.methods", "pre, tl, meta", "any of pre, tl, meta"},
        {"experiment.preprocessing", "on, off", "on and/or off"},
        {"experiment.n_adapt", "10, 20, 50", "adaptation set sizes to sweep"},
        {"experiment.seed", "", "base seed; required when deterministic"},
        {"experiment.n_seeds", "5", "seeds used: seed, seed+1, ..."},
        {"experiment.seeds", "", "explicit seed list, overrides seed/n_seeds"},
        {"experiment.deterministic", "true", ""},
        {"experiment.gnuplot", "false", "also write plot.gp"},
        {"experiment.n_classes", "6", "count classes (0..C-1 people)"},
        {"experiment.n_people", "1", "people per scene for coords"},
        {"experiment.n_envs", "6", "environments; the last is held out"},
        {"experiment.placements", "1", "scenes per class and environment"},
        {"split.ptr_per_scene", "30", ""},
        {"split.val_per_scene", "30", ""},
        {"split.adapt_pool_per_scene", "10", ""},
        {"split.test_per_scene", "50", ""},
        {"sim.grid", "wifi20", "wifi20 | uniform"},
        {"sim.carrier_freq_hz", "2.437e9", ""},
        {"sim.subcarrier_spacing_hz", "312500", ""},
        {"sim.n_subcarriers", "52", "uniform grid only"},
        {"sim.n_tx", "3", ""},
        {"sim.n_rx", "3", ""},
        {"sim.antenna_spacing_m", "0.06", ""},
        {"sim.room_min_m", "4", "room sides drawn from [min, max]"},
        {"sim.room_max_m", "8", ""},
        {"sim.sector_room_width_m", "4.8", "fixed room for the sector task"},
        {"sim.sector_room_depth_m", "3.6", ""},
        {"sim.sector_cell_m", "1.2", ""},
        {"sim.wall_margin_m", "0.3", ""},
        {"sim.n_scatterers", "6", ""},
        {"sim.max_interferers", "3", ""},
        {"sim.interferer_paths", "2", ""},
        {"sim.interferer_power", "0.1", ""},
        {"sim.reflectivity", "0.6", ""},
        {"sim.doppler_max_hz", "0.5", ""},
        {"sim.env_variation", "interference", "layout | interference"},
        {"offsets.boundary_max", "0.00159", "cycles per subcarrier"},
        {"offsets.sampling_max", "0.00159", "cycles per subcarrier"},
        {"offsets.carrier_max", "0.5", "cycles"},
        {"offsets.noise_std", "0.01", ""},
        {"offsets.gain_db_max", "3", "per-packet receiver gain, +-dB"},
        {"offsets.packet_interval_s", "0.001", ""},
        {"offsets.sampling_freq_hz", "1000", ""},
        {"preprocess.reference_subcarrier", "1", ""},
        {"preprocess.unwrap_threshold_rad", "3.141592653589793", ""},
        {"arch.n_conv", "1", ""},
        {"arch.n_filters", "8", ""},
        {"arch.kernel_h", "3", ""},
        {"arch.kernel_w", "3", ""},
        {"arch.n_fc", "1", ""},
        {"arch.fc_width", "32", ""},
        {"arch.pool_bands", "13", "subcarrier bands pooled separately; 1 = global average"},
        {"meta.inner_rate", "0.1", "SGD rate of inner steps and adaptation"},
        {"meta.outer_rate", "0.003", "ADAM rate of the outer update"},
        {"meta.n_epochs", "40", ""},
        {"meta.batch_size", "8", ""},
        {"meta.n_inner_steps", "5", "also the adaptation step count"},
        {"meta.adam_beta1", "0.9", ""},
        {"meta.adam_beta2", "0.999", ""},
        {"meta.adam_eps", "1e-8", ""},
        {"pre.learning_rate", "0.003", "ADAM rate of pre-training"},
        {"pre.n_epochs", "20", ""},
        {"pre.batch_size", "32", ""},
    };
    return table;
}

std::size_t to_size(long long v, const char* key) {
    if (v < 0) fail(ErrorKind::config, std::string("config key '") + key + "' must be >= 0");
    return static_cast<std::size_t>(v);
}

int to_int(long long v, const char* key, long long lo) {
    if (v < lo || v > 1'000'000'000) {
        fail(ErrorKind::config, std::string("config key '") + key + "' must be >= " + std::to_string(lo));
    }
    return static_cast<int>(v);
}

}  // namespace

std::string default_config_text() {
    std::string out;
    for (const auto& k : key_table()) {
        std::string line = std::string(k.value[0] ? "" : "# ") + k.key + " = " + k.value;
        if (k.note[0]) {
            line.resize(std::max<std::size_t>(line.size(), 44), ' ');
            line += std::string("# ") + k.note;
        }
        out += line + "\n";
    }
    return out;
}

std::size_t ExperimentSpec::scenes_per_env() const {
    const std::size_t per = task == sim::LabelKind::coords ? 1 : static_cast<std::size_t>(n_classes);
    return per * static_cast<std::size_t>(placements);
}

std::size_t ExperimentSpec::packets_per_scene() const {
    return std::max(ptr_per_scene + val_per_scene, adapt_pool_per_scene + test_per_scene);
}

ExperimentSpec ExperimentSpec::from_config(const Config& user) {
    std::set<std::string> known;
    Config c;
    for (const auto& k : key_table()) {
        known.insert(k.key);
        if (k.value[0]) c.set(k.key, k.value);
    }
    for (const auto& [k, v] : user.entries()) {
        if (!known.count(k)) fail(ErrorKind::config, "unknown config key '" + k + "'");
        c.set(k, v);
    }

    ExperimentSpec s;
    s.task = parse_task(c.get_string("experiment.task", ""));
    s.methods.clear();
    for (const auto& m : c.get_list("experiment.methods", {})) s.methods.push_back(parse_method(m));
    if (s.methods.empty()) fail(ErrorKind::config, "experiment.methods is empty");
    s.preprocessing.clear();
    for (const auto& p : c.get_list("experiment.preprocessing", {})) {
        if (p == "on") s.preprocessing.push_back(true);
        else if (p == "off") s.preprocessing.push_back(false);
        else fail(ErrorKind::config, "experiment.preprocessing entries must be on or off, got '" + p + "'");
    }
    if (s.preprocessing.empty()) fail(ErrorKind::config, "experiment.preprocessing is empty");
    s.n_adapt.clear();
    for (long long n : c.get_int_list("experiment.n_adapt", {})) s.n_adapt.push_back(to_int(n, "experiment.n_adapt", 0));
    if (s.n_adapt.empty()) fail(ErrorKind::config, "experiment.n_adapt is empty");

    const bool deterministic = c.get_bool("experiment.deterministic", true);
    if (c.has("experiment.seeds")) {
        for (const auto& item : c.get_list("experiment.seeds", {})) {
            Config one;
            one.set("s", item);
            s.seeds.push_back(one.get_u64("s", 0));
        }
        if (s.seeds.empty()) fail(ErrorKind::config, "experiment.seeds is empty");
    } else {
        std::uint64_t base = 0;
        if (c.has("experiment.seed")) {
            base = c.get_u64("experiment.seed", 0);
        } else if (deterministic) {
            fail(ErrorKind::config, "seed missing: set experiment.seed (or pass --seed) when determinism is requested");
        } else {
            base = std::random_device{}();
            c.set("experiment.seed", std::to_string(base));
        }
        const int n = to_int(c.get_int("experiment.n_seeds", 5), "experiment.n_seeds", 1);
        std::string list;
        for (int i = 0; i < n; ++i) {
            s.seeds.push_back(base + static_cast<std::uint64_t>(i));
            list += (i ? ", " : "") + std::to_string(base + static_cast<std::uint64_t>(i));
        }
        c.set("experiment.seeds", list);
    }
    s.gnuplot = c.get_bool("experiment.gnuplot", false);
    s.n_people = to_int(c.get_int("experiment.n_people", 1), "experiment.n_people", 1);
    s.n_envs = to_int(c.get_int("experiment.n_envs", 6), "experiment.n_envs", 2);
    s.placements = to_int(c.get_int("experiment.placements", 1), "experiment.placements", 1);

    s.ptr_per_scene = to_size(c.get_int("split.ptr_per_scene", 0), "split.ptr_per_scene");
    s.val_per_scene = to_size(c.get_int("split.val_per_scene", 0), "split.val_per_scene");
    s.adapt_pool_per_scene = to_size(c.get_int("split.adapt_pool_per_scene", 0), "split.adapt_pool_per_scene");
    s.test_per_scene = to_size(c.get_int("split.test_per_scene", 0), "split.test_per_scene");
    if (s.val_per_scene == 0 || s.test_per_scene == 0) {
        fail(ErrorKind::config, "split.val_per_scene and split.test_per_scene must be > 0");
    }

    const std::string grid = c.get_string("sim.grid", "");
    const double fc = c.get_double("sim.carrier_freq_hz", 0);
    const double spacing = c.get_double("sim.subcarrier_spacing_hz", 0);
    if (grid == "wifi20") {
        s.grid = sim::SubcarrierGrid::wifi_20mhz(fc, spacing);
    } else if (grid == "uniform") {
        s.grid = sim::SubcarrierGrid::uniform(fc, to_size(c.get_int("sim.n_subcarriers", 0), "sim.n_subcarriers"),
                                              spacing);
    } else {
        fail(ErrorKind::config, "sim.grid must be wifi20 or uniform, got '" + grid + "'");
    }
    s.geometry = sim::ArrayGeometry::uniform_linear(to_size(c.get_int("sim.n_tx", 0), "sim.n_tx"),
                                                    to_size(c.get_int("sim.n_rx", 0), "sim.n_rx"),
                                                    c.get_double("sim.antenna_spacing_m", 0));
    s.room_min_m = c.get_double("sim.room_min_m", 0);
    s.room_max_m = c.get_double("sim.room_max_m", 0);
    s.sector_room = {c.get_double("sim.sector_room_width_m", 0), c.get_double("sim.sector_room_depth_m", 0)};
    s.sector_cell_m = c.get_double("sim.sector_cell_m", 0);
    s.wall_margin_m = c.get_double("sim.wall_margin_m", 0);
    s.n_scatterers = to_int(c.get_int("sim.n_scatterers", 0), "sim.n_scatterers", 0);
    s.max_interferers = to_int(c.get_int("sim.max_interferers", 0), "sim.max_interferers", 0);
    s.interferer_paths = to_int(c.get_int("sim.interferer_paths", 0), "sim.interferer_paths", 0);
    s.interferer_power = c.get_double("sim.interferer_power", 0);
    s.reflectivity = c.get_double("sim.reflectivity", 0);
    s.doppler_max_hz = c.get_double("sim.doppler_max_hz", 0);
    const std::string variation = c.get_string("sim.env_variation", "");
    if (variation == "interference") {
        s.shared_layout = true;
        if (s.max_interferers < 1) fail(ErrorKind::config, "sim.env_variation = interference needs sim.max_interferers >= 1");
    } else if (variation != "layout") {
        fail(ErrorKind::config, "sim.env_variation must be layout or interference, got '" + variation + "'");
    }
    if (!(s.room_min_m > 2 * s.wall_margin_m && s.room_max_m >= s.room_min_m)) {
        fail(ErrorKind::config, "need sim.room_max_m >= sim.room_min_m > 2 * sim.wall_margin_m");
    }
    if (!(s.sector_cell_m > 0 && s.sector_room.x > 0 && s.sector_room.y > 0)) {
        fail(ErrorKind::config, "sector room and cell sizes must be positive");
    }

    s.offsets.boundary_offset_max = c.get_double("offsets.boundary_max", 0);
    s.offsets.sampling_offset_max = c.get_double("offsets.sampling_max", 0);
    s.offsets.carrier_offset_max = c.get_double("offsets.carrier_max", 0);
    s.offsets.noise_std = c.get_double("offsets.noise_std", 0);
    s.offsets.gain_db_max = c.get_double("offsets.gain_db_max", 0);
    s.offsets.packet_interval_s = c.get_double("offsets.packet_interval_s", 0);
    s.offsets.sampling_freq_hz = c.get_double("offsets.sampling_freq_hz", 0);
    try {
        s.offsets.validate();
        s.grid.validate();
        s.geometry.validate();
    } catch (const Error& e) {
        fail(ErrorKind::config, e.what());
    }

    s.preprocess.reference_subcarrier =
        to_int(c.get_int("preprocess.reference_subcarrier", 1), "preprocess.reference_subcarrier", 1);
    if (static_cast<std::size_t>(s.preprocess.reference_subcarrier) > s.grid.size()) {
        fail(ErrorKind::config, "preprocess.reference_subcarrier exceeds the subcarrier count");
    }
    s.preprocess.unwrap_threshold_rad = c.get_double("preprocess.unwrap_threshold_rad", kPi);

    s.arch.n_conv = to_int(c.get_int("arch.n_conv", 0), "arch.n_conv", 0);
    s.arch.n_filters = to_int(c.get_int("arch.n_filters", 0), "arch.n_filters", 1);
    s.arch.kernel_h = to_int(c.get_int("arch.kernel_h", 0), "arch.kernel_h", 1);
    s.arch.kernel_w = to_int(c.get_int("arch.kernel_w", 0), "arch.kernel_w", 1);
    s.arch.n_fc = to_int(c.get_int("arch.n_fc", 0), "arch.n_fc", 0);
    s.arch.fc_width = to_int(c.get_int("arch.fc_width", 0), "arch.fc_width", 1);
    s.arch.pool_bands = to_int(c.get_int("arch.pool_bands", 0), "arch.pool_bands", 1);

    s.meta.inner_rate = c.get_double("meta.inner_rate", 0);
    s.meta.outer_rate = c.get_double("meta.outer_rate", 0);
    s.meta.n_epochs = to_int(c.get_int("meta.n_epochs", 0), "meta.n_epochs", 0);
    s.meta.batch_size = to_int(c.get_int("meta.batch_size", 0), "meta.batch_size", 1);
    s.meta.n_inner_steps = to_int(c.get_int("meta.n_inner_steps", 0), "meta.n_inner_steps", 0);
    s.meta.adam.beta1 = c.get_double("meta.adam_beta1", 0.9);
    s.meta.adam.beta2 = c.get_double("meta.adam_beta2", 0.999);
    s.meta.adam.eps = c.get_double("meta.adam_eps", 1e-8);
    s.pre = s.meta;
    s.pre.outer_rate = c.get_double("pre.learning_rate", 0);
    s.pre.n_epochs = to_int(c.get_int("pre.n_epochs", 0), "pre.n_epochs", 0);
    s.pre.batch_size = to_int(c.get_int("pre.batch_size", 0), "pre.batch_size", 1);

    if (s.task == sim::LabelKind::sector) {
        s.n_classes = sim::SectorGrid{s.sector_room, s.sector_cell_m}.n_sectors();
    } else {
        s.n_classes = to_int(c.get_int("experiment.n_classes", 6), "experiment.n_classes", 2);
    }
    try {
        s.meta.validate();
        s.pre.validate();
        resolved_arch(s).validate();
    } catch (const Error& e) {
        fail(ErrorKind::config, e.what());
    }
    const std::size_t pool = s.adapt_pool_per_scene * s.scenes_per_env();
    for (int n : s.n_adapt) {
        if (static_cast<std::size_t>(n) > pool) {
            fail(ErrorKind::config, "N_adpt=" + std::to_string(n) + " exceeds the adaptation pool of " +
                                        std::to_string(pool) + " samples");
        }
    }
    s.config = c;
    return s;
}

nn::ArchConfig resolved_arch(const ExperimentSpec& spec) {
    nn::ArchConfig a = spec.arch;
    a.K = static_cast<int>(spec.grid.size());
    a.M = static_cast<int>(spec.geometry.links());
    a.n_classes = spec.n_classes;
    a.n_people = spec.n_people;
    if (spec.task == sim::LabelKind::coords) {
        a.head = nn::Head::regression;
        a.target_width = spec.room_max_m;
        a.target_depth = spec.room_max_m;
    } else {
        a.head = nn::Head::classification;
    }
    return a;
}

namespace {

Point random_spot(Rng& rng, double x0, double x1, double y0, double y1) {
    return {uniform(rng, x0, x1), uniform(rng, y0, y1)};
}

double dist(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

// A person position in [x0, x1] x [y0, y1] kept clear of both transceivers.
Point place_person(Rng& rng, const sim::SceneSpec& scene, double x0, double x1, double y0, double y1) {
    Point p{};
    for (int attempt = 0; attempt < 1000; ++attempt) {
        p = random_spot(rng, x0, x1, y0, y1);
        if (dist(p, scene.tx) >= 0.3 && dist(p, scene.rx) >= 0.3) return p;
    }
    return p;
}

}  // namespace

std::vector<sim::SceneSpec> build_scenes(const ExperimentSpec& spec, std::uint64_t seed) {
    std::vector<sim::SceneSpec> scenes;
    scenes.reserve(spec.n_scenes());
    const double m = spec.wall_margin_m;
    const sim::SectorGrid sectors{spec.sector_room, spec.sector_cell_m};
    for (int e = 0; e < spec.n_envs; ++e) {
        Rng rng = substream(seed, Stream::environment, static_cast<std::uint64_t>(e), 1);
        // Layout draws come from one stream shared by all environments when requested.
        const auto layout_id = static_cast<std::uint64_t>(spec.shared_layout ? spec.n_envs : e);
        Rng layout_rng = substream(seed, Stream::environment, layout_id, 3);
        sim::SceneSpec base;
        if (spec.task == sim::LabelKind::sector) {
            base.room = spec.sector_room;
        } else {
            base.room = {uniform(layout_rng, spec.room_min_m, spec.room_max_m),
                         uniform(layout_rng, spec.room_min_m, spec.room_max_m)};
        }
        const double w = base.room.x, d = base.room.y;
        if (spec.task == sim::LabelKind::sector) {
            // Against the side walls, clear of every cell centre.
            base.tx = random_spot(layout_rng, 0.1, 0.3, m, d - m);
            base.rx = random_spot(layout_rng, w - 0.3, w - 0.1, m, d - m);
        } else {
            base.tx = random_spot(layout_rng, std::min(m, 0.25 * w), 0.25 * w, m, d - m);
            base.rx = random_spot(layout_rng, 0.75 * w, std::max(w - m, 0.75 * w), m, d - m);
        }
        base.n_static_scatterers = spec.n_scatterers;
        base.scatterer_seed = derive_seed(seed, Stream::environment, layout_id, 2);
        base.person_reflectivity = spec.reflectivity;
        base.doppler_max_hz = spec.doppler_max_hz;
        const std::uint64_t min_interf = spec.shared_layout ? 1 : 0;
        const auto n_interf =
            min_interf + uniform_index(rng, static_cast<std::uint64_t>(spec.max_interferers) + 1 - min_interf);
        for (std::uint64_t j = 0; j < n_interf; ++j) {
            base.interferers.push_back({spec.interferer_paths,
                                        derive_seed(seed, Stream::interferer, static_cast<std::uint64_t>(e), j),
                                        spec.interferer_power});
        }

        // Counting scenes put c people on a random c-subset of C-1 fixed spots.
        std::vector<Point> spots;
        if (spec.task == sim::LabelKind::count) {
            for (int i = 0; i + 1 < spec.n_classes; ++i) {
                spots.push_back(place_person(layout_rng, base, m, w - m, m, d - m));
            }
        }
        const int n_groups = spec.task == sim::LabelKind::coords ? 1 : spec.n_classes;
        for (int c = 0; c < n_groups; ++c) {
            for (int p = 0; p < spec.placements; ++p) {
                sim::SceneSpec scene = base;
                switch (spec.task) {
                    case sim::LabelKind::count: {
                        std::vector<Point> pool = spots;
                        for (int i = 0; i < c; ++i) {
                            const auto j = static_cast<std::size_t>(i) +
                                           uniform_index(layout_rng, pool.size() - static_cast<std::size_t>(i));
                            std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
                            scene.people.push_back(pool[static_cast<std::size_t>(i)]);
                        }
                        break;
                    }
                    case sim::LabelKind::sector:
                        scene.people.push_back(sectors.center_of(c));
                        break;
                    case sim::LabelKind::coords:
                        for (int i = 0; i < spec.n_people; ++i) {
                            scene.people.push_back(place_person(rng, scene, m, w - m, m, d - m));
                        }
                        break;
                }
                scenes.push_back(std::move(scene));
            }
        }
    }
    return scenes;
}

std::vector<sim::CsiPacket> generate(const ExperimentSpec& spec, std::uint64_t seed) {
    const std::vector<sim::SceneSpec> scenes = build_scenes(spec, seed);
    const sim::LabelRequest request{spec.task, spec.n_classes, spec.sector_cell_m};
    return sim::generate_dataset(scenes, spec.offsets, spec.geometry, spec.grid, spec.packets_per_scene(), seed,
                                 request);
}

prep::BatchResult prepare(const ExperimentSpec& spec, std::span<const sim::CsiPacket> packets, bool preprocessing) {
    if (preprocessing) return prep::preprocess_all(packets, spec.preprocess);
    prep::BatchResult out;
    out.samples.reserve(packets.size());
    for (const auto& p : packets) out.samples.push_back(prep::raw_sample(p));
    return out;
}

Layout make_layout(const ExperimentSpec& spec) {
    Layout layout;
    const auto P = static_cast<std::int64_t>(spec.packets_per_scene());
    const std::size_t spe = spec.scenes_per_env();
    for (std::size_t s = 0; s < spec.n_scenes(); ++s) {
        const auto env = static_cast<int>(s / spe);
        const std::int64_t base = static_cast<std::int64_t>(s) * P;
        if (env < spec.n_envs - 1) {
            const std::string u = std::to_string(env + 1);
            const auto n_ptr = static_cast<std::int64_t>(spec.ptr_per_scene);
            layout.push_back({"ptr(" + u + ")", {base, n_ptr}});
            layout.push_back({"val(" + u + ")", {base + n_ptr, static_cast<std::int64_t>(spec.val_per_scene)}});
        } else {
            const auto n_test = static_cast<std::int64_t>(spec.test_per_scene);
            layout.push_back({"adpt", {base, static_cast<std::int64_t>(spec.adapt_pool_per_scene)}});
            layout.push_back({"test", {base + P - n_test, n_test}});
        }
    }
    return layout;
}

Splits split(const ExperimentSpec& spec, std::span<const PreprocessedSample> dataset) {
    const std::vector<SampleSet> sets = make_splits(dataset, make_layout(spec));
    Splits out;
    std::map<std::string, const SampleSet*> by_role;
    for (const auto& s : sets) by_role[s.role] = &s;
    for (int u = 1; u < spec.n_envs; ++u) {
        meta::Task<PreprocessedSample> t;
        t.id = u;
        t.ptr = by_role.at("ptr(" + std::to_string(u) + ")")->samples;
        t.val = by_role.at("val(" + std::to_string(u) + ")")->samples;
        out.train.insert(out.train.end(), t.ptr.begin(), t.ptr.end());
        out.train.insert(out.train.end(), t.val.begin(), t.val.end());
        out.tasks.tasks.push_back(std::move(t));
    }
    out.adapt_pool = by_role.at("adpt")->samples;
    out.test = by_role.at("test")->samples;
    return out;
}

SamplePtrs adaptation_subset(const ExperimentSpec& spec, const Splits& splits, int n) {
    const std::size_t per = spec.adapt_pool_per_scene;
    const std::size_t scenes = spec.scenes_per_env();
    if (n < 0 || static_cast<std::size_t>(n) > per * scenes || splits.adapt_pool.size() != per * scenes) {
        fail(ErrorKind::invalid_argument, "cannot draw " + std::to_string(n) + " adaptation samples from a pool of " +
                                              std::to_string(splits.adapt_pool.size()));
    }
    // Cycle classes fastest, then placements, then packets within a scene.
    const auto placements = static_cast<std::size_t>(spec.placements);
    const std::size_t groups = scenes / placements;
    SamplePtrs out;
    for (std::size_t r = 0; r < per; ++r) {
        for (std::size_t p = 0; p < placements; ++p) {
            for (std::size_t g = 0; g < groups; ++g) {
                if (out.size() == static_cast<std::size_t>(n)) return out;
                out.push_back(splits.adapt_pool[(g * placements + p) * per + r]);
            }
        }
    }
    return out;
}

nn::ModelParams train_model(const ExperimentSpec& spec, const nn::Network& net, const Splits& splits, Method method,
                            std::uint64_t seed, meta::TrainingLog* log) {
    const meta::NetworkObjective obj(net);
    const nn::ModelParams init = nn::init_params(net.arch(), derive_seed(seed, Stream::init));
    if (method == Method::meta) {
        meta::MetaConfig cfg = spec.meta;
        cfg.seed = seed;
        return meta::meta_train<PreprocessedSample>(obj, init, splits.tasks, cfg, log);
    }
    meta::MetaConfig cfg = spec.pre;
    cfg.seed = seed;
    return meta::pretrain<PreprocessedSample>(obj, init, splits.train, cfg, log);
}

nn::ModelParams adapt_model(const ExperimentSpec& spec, const nn::Network& net, const nn::ModelParams& trained,
                            const SamplePtrs& adapt_set, Method method) {
    if (method == Method::tl) return meta::tl_finetune(net, trained, adapt_set, spec.meta);
    const meta::NetworkObjective obj(net);
    return meta::adapt<PreprocessedSample>(obj, trained, adapt_set, spec.meta);
}

ExperimentResults run_experiment(const ExperimentSpec& spec, std::ostream* progress) {
    ExperimentResults results;
    const nn::Network net(resolved_arch(spec));
    const bool need_pre = std::any_of(spec.methods.begin(), spec.methods.end(),
                                      [](Method m) { return m != Method::meta; });
    const bool need_meta = std::find(spec.methods.begin(), spec.methods.end(), Method::meta) != spec.methods.end();
    for (std::uint64_t seed : spec.seeds) {
        if (progress) *progress << "seed " << seed << ": generating " << spec.n_scenes() * spec.packets_per_scene()
                                << " packets\n";
        const std::vector<sim::CsiPacket> packets = generate(spec, seed);
        for (bool pp : spec.preprocessing) {
            const prep::BatchResult batch = prepare(spec, packets, pp);
            if (!batch.rejected.empty()) {
                fail(ErrorKind::data, std::to_string(batch.rejected.size()) + " packets rejected by preprocessing, first index " +
                                          std::to_string(batch.rejected.front().index) + ": " +
                                          batch.rejected.front().reason);
            }
            const Splits splits = split(spec, batch.samples);
            std::map<Method, nn::ModelParams> trained;
            if (need_pre) {
                if (progress) *progress << "seed " << seed << (pp ? " [csi]" : " [raw]") << ": pre-training\n";
                TrainingCurve curve{seed, pp, "pretrain", {}};
                trained[Method::pre] = train_model(spec, net, splits, Method::pre, seed, &curve.log);
                results.curves.push_back(std::move(curve));
            }
            if (need_meta) {
                if (progress) *progress << "seed " << seed << (pp ? " [csi]" : " [raw]") << ": meta-training\n";
                TrainingCurve curve{seed, pp, "meta", {}};
                trained[Method::meta] = train_model(spec, net, splits, Method::meta, seed, &curve.log);
                results.curves.push_back(std::move(curve));
            }
            for (int n : spec.n_adapt) {
                const SamplePtrs adapt_set = adaptation_subset(spec, splits, n);
                for (Method m : spec.methods) {
                    const nn::ModelParams& start = trained.at(m == Method::meta ? Method::meta : Method::pre);
                    const nn::ModelParams adapted = adapt_model(spec, net, start, adapt_set, m);
                    CellResult cell{m, pp, n, seed, meta::evaluate(net, adapted, splits.test)};
                    if (progress) {
                        const double v = cell.report.accuracy ? *cell.report.accuracy : cell.report.rmse_m.value_or(0);
                        *progress << "  " << method_name(m) << (pp ? "-csi" : "-raw") << " N_adpt=" << n << ": "
                                  << (cell.report.accuracy ? "accuracy " : "rmse ") << v << "\n";
                    }
                    results.cells.push_back(std::move(cell));
                }
            }
        }
    }
    return results;
}

namespace {

std::string num(double v, const char* f = "%.6f") {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double metric_of(const CellResult& c) {
    return c.report.accuracy ? *c.report.accuracy : c.report.rmse_m.value_or(std::nan(""));
}

std::string cell_tag(Method m, bool pp, int n) {
    return std::string(method_name(m)) + (pp ? "_csi_" : "_raw_") + std::to_string(n);
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) fail(ErrorKind::data, "cannot write " + p.string());
    return out;
}

}  // namespace

double mean_metric(const ExperimentResults& results, Method method, bool preprocessing, int n_adapt) {
    double sum = 0.0;
    int n = 0;
    for (const auto& c : results.cells) {
        if (c.method == method && c.preprocessing == preprocessing && c.n_adapt == n_adapt) {
            sum += metric_of(c);
            ++n;
        }
    }
    if (n == 0) fail(ErrorKind::invalid_argument, "no results for the requested cell");
    return sum / n;
}

void write_reports(const ExperimentSpec& spec, const ExperimentResults& results, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const bool classify = spec.task != sim::LabelKind::coords;
    const std::string metric = classify ? "accuracy" : "rmse_m";
    const std::string task = sim::label_kind_name(spec.task);

    auto summary = open_out(out_dir / "results.csv");
    summary << "task,method,preprocessing,n_adapt,metric,mean,std,n_seeds\n";
    auto by_seed = open_out(out_dir / "results_by_seed.csv");
    by_seed << "task,method,preprocessing,n_adapt,seed,metric,value\n";

    for (bool pp : spec.preprocessing) {
        for (Method m : spec.methods) {
            for (int n : spec.n_adapt) {
                std::vector<const CellResult*> cells;
                for (const auto& c : results.cells) {
                    if (c.method == m && c.preprocessing == pp && c.n_adapt == n) cells.push_back(&c);
                }
                if (cells.empty()) continue;
                double mean = 0.0, var = 0.0;
                for (const auto* c : cells) mean += metric_of(*c);
                mean /= static_cast<double>(cells.size());
                for (const auto* c : cells) var += (metric_of(*c) - mean) * (metric_of(*c) - mean);
                var /= static_cast<double>(cells.size());
                const std::string head = task + "," + method_name(m) + "," + (pp ? "on" : "off") + "," + std::to_string(n);
                summary << head << "," << metric << "," << num(mean) << "," << num(std::sqrt(var)) << ","
                        << cells.size() << "\n";
                for (const auto* c : cells) {
                    by_seed << head << "," << c->seed << "," << metric << "," << num(metric_of(*c)) << "\n";
                }

                if (classify) {
                    Matrix<std::uint64_t> counts(static_cast<std::size_t>(spec.n_classes),
                                                 static_cast<std::size_t>(spec.n_classes));
                    for (const auto* c : cells) {
                        const auto& cc = c->report.confusion.counts;
                        for (std::size_t i = 0; i < cc.rows(); ++i) {
                            for (std::size_t j = 0; j < cc.cols(); ++j) counts(i, j) += cc(i, j);
                        }
                    }
                    auto out = open_out(out_dir / ("confusion_" + cell_tag(m, pp, n) + ".csv"));
                    out << "truth";
                    for (int j = 0; j < spec.n_classes; ++j) out << ",pred_" << j;
                    out << "\n";
                    for (std::size_t i = 0; i < counts.rows(); ++i) {
                        std::uint64_t total = 0;
                        for (std::size_t j = 0; j < counts.cols(); ++j) total += counts(i, j);
                        out << i;
                        for (std::size_t j = 0; j < counts.cols(); ++j) {
                            out << "," << num(total ? static_cast<double>(counts(i, j)) / static_cast<double>(total) : 0.0);
                        }
                        out << "\n";
                    }
                } else {
                    std::vector<double> errors;
                    for (const auto* c : cells) {
                        errors.insert(errors.end(), c->report.error_cdf.sorted.begin(), c->report.error_cdf.sorted.end());
                    }
                    std::sort(errors.begin(), errors.end());
                    auto out = open_out(out_dir / ("cdf_" + cell_tag(m, pp, n) + ".csv"));
                    out << "rank,error_m,cdf\n";
                    for (std::size_t i = 0; i < errors.size(); ++i) {
                        out << i + 1 << "," << num(errors[i]) << ","
                            << num(static_cast<double>(i + 1) / static_cast<double>(errors.size())) << "\n";
                    }
                }
            }
        }
    }

    auto log = open_out(out_dir / "training_log.csv");
    log << "seed,preprocessing,phase,epoch,task,loss\n";
    for (const auto& curve : results.curves) {
        for (const auto& row : curve.log) {
            log << curve.seed << "," << (curve.preprocessing ? "on" : "off") << "," << curve.phase << "," << row.epoch
                << "," << row.task << "," << num(row.loss, "%.9g") << "\n";
        }
    }

    auto manifest = open_out(out_dir / "manifest.txt");
    manifest << "# metacsi experiment manifest; usable as a config file\n";
    manifest << "# config_hash = " << spec.config.hash() << "\n";
    manifest << "# seeds = " << spec.config.get_string("experiment.seeds", "") << "\n";
    manifest << spec.config.canonical_text();

    if (spec.gnuplot) {
        auto gp = open_out(out_dir / "plot.gp");
        gp << "set datafile separator ','\n"
           << "set xlabel 'N_adpt'\n"
           << "set ylabel '" << metric << "'\n"
           << "set key bottom right\n"
           << "set terminal pngcairo size 800,500\n"
           << "set output 'results.png'\n"
           << "plot \\\n";
        bool first = true;
        for (bool pp : spec.preprocessing) {
            for (Method m : spec.methods) {
                if (!first) gp << ", \\\n";
                first = false;
                gp << "  'results.csv' using ((strcol(2) eq '" << method_name(m) << "' && strcol(3) eq '" << (pp ? "on" : "off")
                   << "') ? $4 : 1/0):6 with linespoints title '" << method_name(m) << (pp ? "-csi" : "-raw") << "'";
            }
        }
        gp << "\n";
    }
}

}  // namespace metacsi::exp
