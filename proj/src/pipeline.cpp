#include "plumeemu/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "binary_io.hpp"
#include "plumeemu/error.hpp"

namespace plumeemu {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    std::uint32_t w[2];
    seq.generate(w, w + 2);
    return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

}  // namespace

// ================================================================ ConfigFile

ConfigFile ConfigFile::parse(std::istream& is) {
    ConfigFile cfg;
    std::string line, section = "run";
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                throw ConfigError("config line " + std::to_string(line_no) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        cfg.values_[section + "." + key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

ConfigFile ConfigFile::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file '" + path + "'");
    return parse(is);
}

std::optional<std::string> ConfigFile::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
}

void ConfigFile::write(std::ostream& os) const {
    std::string current;
    bool first = true;
    for (const auto& [key, value] : values_) {
        const auto dot = key.find('.');
        const auto section = key.substr(0, dot);
        if (first || section != current) {
            if (!first) os << '\n';
            os << '[' << section << "]\n";
            current = section;
            first = false;
        }
        os << key.substr(dot + 1) << " = " << value << '\n';
    }
}

std::string to_string(ReducerKind k) { return k == ReducerKind::Eof ? "eof" : "cvae"; }

ReducerKind reducer_from_string(const std::string& s) {
    if (s == "eof") return ReducerKind::Eof;
    if (s == "cvae") return ReducerKind::Cvae;
    throw ConfigError("unknown reducer '" + s + "' (expected eof or cvae)");
}

// ================================================================ ExperimentConfig

namespace {

double to_double(const std::string& key, const std::string& v) {
    try {
        return detail::parse_double(v, key.c_str());
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

std::uint64_t to_unsigned(const std::string& key, const std::string& v) {
    long long x = 0;
    try {
        x = detail::parse_int(v, key.c_str());
    } catch (const std::exception&) {
        throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
    }
    if (x < 0) throw ConfigError("config: '" + key + "' must be nonnegative");
    return static_cast<std::uint64_t>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config: '" + key + "' expects true or false, got '" + v + "'");
}

struct Field {
    std::string key;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class T, class Access>
Field numeric_field(std::string key, Access access) {
    Field f;
    f.key = key;
    f.set = [key, access](ExperimentConfig& c, const std::string& v) {
        if constexpr (std::is_floating_point_v<T>) {
            access(c) = to_double(key, v);
        } else if constexpr (std::is_same_v<T, bool>) {
            access(c) = to_bool(key, v);
        } else {
            access(c) = static_cast<T>(to_unsigned(key, v));
        }
    };
    f.get = [access](const ExperimentConfig& c) {
        const T value = access(const_cast<ExperimentConfig&>(c));
        if constexpr (std::is_floating_point_v<T>) {
            return detail::format_double(value);
        } else if constexpr (std::is_same_v<T, bool>) {
            return std::string(value ? "true" : "false");
        } else {
            return std::to_string(value);
        }
    };
    return f;
}

#define PLUMEEMU_FIELD(T, key, member) numeric_field<T>(key, [](ExperimentConfig& c) -> T& { return c.member; })

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> t;
        t.push_back(PLUMEEMU_FIELD(std::uint64_t, "run.seed", seed));
        t.push_back(PLUMEEMU_FIELD(std::size_t, "run.r", r));
        t.push_back(PLUMEEMU_FIELD(std::size_t, "run.n_samples", n_samples));
        t.push_back(PLUMEEMU_FIELD(double, "run.train_fraction", train_fraction));
        Field reducers;
        reducers.key = "run.reducers";
        reducers.set = [](ExperimentConfig& c, const std::string& v) {
            c.reducers.clear();
            for (const auto& part : detail::split(v, ',')) {
                const auto name = trim(part);
                if (!name.empty()) c.reducers.push_back(reducer_from_string(name));
            }
            if (c.reducers.empty()) throw ConfigError("config: run.reducers lists no reducer");
        };
        reducers.get = [](const ExperimentConfig& c) {
            std::string out;
            for (std::size_t i = 0; i < c.reducers.size(); ++i) out += (i ? "," : "") + to_string(c.reducers[i]);
            return out;
        };
        t.push_back(reducers);

        t.push_back(PLUMEEMU_FIELD(std::size_t, "synth.n_plumes", synth.n_plumes));
        t.push_back(PLUMEEMU_FIELD(double, "synth.days", synth.days));
        t.push_back(PLUMEEMU_FIELD(std::size_t, "synth.n_lon", synth.grid.n_lon));
        t.push_back(PLUMEEMU_FIELD(std::size_t, "synth.n_lat", synth.grid.n_lat));
        t.push_back(PLUMEEMU_FIELD(double, "synth.lon_min", synth.grid.lon_min));
        t.push_back(PLUMEEMU_FIELD(double, "synth.lat_min", synth.grid.lat_min));
        t.push_back(PLUMEEMU_FIELD(double, "synth.d_lon", synth.grid.d_lon));
        t.push_back(PLUMEEMU_FIELD(double, "synth.d_lat", synth.grid.d_lat));
        t.push_back(PLUMEEMU_FIELD(double, "synth.base_speed", synth.wind.base_speed));
        t.push_back(PLUMEEMU_FIELD(double, "synth.base_direction", synth.wind.base_direction));
        t.push_back(PLUMEEMU_FIELD(double, "synth.drift_amplitude", synth.wind.direction_drift_amplitude));
        t.push_back(PLUMEEMU_FIELD(double, "synth.drift_period", synth.wind.drift_period));
        t.push_back(PLUMEEMU_FIELD(double, "synth.warp_amplitude", synth.wind.warp_amplitude));
        t.push_back(PLUMEEMU_FIELD(double, "synth.warp_wavelength", synth.wind.warp_wavelength));
        t.push_back(PLUMEEMU_FIELD(double, "synth.speed_modulation", synth.wind.speed_modulation));
        t.push_back(PLUMEEMU_FIELD(std::uint64_t, "synth.wind_seed", synth.wind.seed));
        t.push_back(PLUMEEMU_FIELD(double, "synth.duration", synth.shape.duration));
        t.push_back(PLUMEEMU_FIELD(double, "synth.step", synth.shape.step));
        t.push_back(PLUMEEMU_FIELD(double, "synth.sigma0", synth.shape.sigma0));
        t.push_back(PLUMEEMU_FIELD(double, "synth.spread", synth.shape.spread));
        t.push_back(PLUMEEMU_FIELD(double, "synth.decay", synth.shape.decay));
        t.push_back(PLUMEEMU_FIELD(double, "synth.mass_budget", synth.shape.mass_budget));

        t.push_back(PLUMEEMU_FIELD(double, "preprocess.annulus_inner", preprocess.angle.annulus_inner));
        t.push_back(PLUMEEMU_FIELD(double, "preprocess.annulus_outer", preprocess.angle.annulus_outer));
        t.push_back(PLUMEEMU_FIELD(double, "preprocess.window_radius", preprocess.angle.window_radius));
        t.push_back(PLUMEEMU_FIELD(double, "preprocess.idw_power", preprocess.idw.power));
        t.push_back(PLUMEEMU_FIELD(std::size_t, "preprocess.idw_k", preprocess.idw.k_neighbors));
        t.push_back(PLUMEEMU_FIELD(std::size_t, "preprocess.target_res", preprocess.target_res));
        t.push_back(PLUMEEMU_FIELD(double, "preprocess.filter_quantile", preprocess.filter_quantile));
        t.push_back(PLUMEEMU_FIELD(std::size_t, "preprocess.filter_min_cells", preprocess.filter_min_cells));
        t.push_back(PLUMEEMU_FIELD(bool, "preprocess.apply_filter", preprocess.apply_filter));

        t.push_back(PLUMEEMU_FIELD(std::size_t, "cvae.epochs", cvae.epochs));
        t.push_back(PLUMEEMU_FIELD(std::size_t, "cvae.restarts", cvae.restarts));
        t.push_back(PLUMEEMU_FIELD(std::size_t, "cvae.batch_size", cvae.batch_size));
        t.push_back(PLUMEEMU_FIELD(std::size_t, "cvae.draws", cvae.draws));
        t.push_back(PLUMEEMU_FIELD(double, "cvae.lambda", cvae.lambda));
        t.push_back(PLUMEEMU_FIELD(double, "cvae.learning_rate", cvae.learning_rate));

        t.push_back(PLUMEEMU_FIELD(std::size_t, "gp.restarts", gp.restarts));
        t.push_back(PLUMEEMU_FIELD(int, "gp.max_iterations", gp.max_iterations));
        t.push_back(PLUMEEMU_FIELD(double, "gp.jitter", gp.jitter.initial));
        t.push_back(PLUMEEMU_FIELD(double, "gp.jitter_max", gp.jitter.max));
        return t;
    }();
    return table;
}

#undef PLUMEEMU_FIELD

}  // namespace

ExperimentConfig::ExperimentConfig() {
    synth.grid.lon_min = -32 * synth.grid.d_lon;
    synth.grid.lat_min = 45.0;
    cvae.epochs = 100;
    cvae.restarts = 3;
    cvae.batch_size = 16;
}

ExperimentConfig ExperimentConfig::from_config(const ConfigFile& file) {
    ExperimentConfig c;
    const auto& table = fields();
    for (const auto& [key, value] : file.values()) {
        const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.key == key; });
        if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
        it->set(c, value);
    }
    c.validate();
    return c;
}

ConfigFile ExperimentConfig::to_config() const {
    ConfigFile f;
    for (const auto& field : fields()) f.set(field.key, field.get(*this));
    return f;
}

void ExperimentConfig::validate() const {
    if (r == 0) throw ConfigError("config: r must be positive");
    if (n_samples == 0) throw ConfigError("config: n_samples must be positive");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("config: train_fraction must lie in (0, 1)");
    if (synth.n_plumes < 4) throw ConfigError("config: synth.n_plumes must be at least 4");
    if (!(synth.days > 0.0)) throw ConfigError("config: synth.days must be positive");
    synth.grid.validate();
    synth.wind.validate();
    synth.shape.validate();
    if (preprocess.target_res == 0) throw ConfigError("config: preprocess.target_res must be positive");
    if (preprocess.idw.k_neighbors == 0) throw ConfigError("config: preprocess.idw_k must be positive");
    if (!(preprocess.idw.power > 0.0)) throw ConfigError("config: preprocess.idw_power must be positive");
    if (!(preprocess.angle.annulus_inner >= 0.0 && preprocess.angle.annulus_outer > preprocess.angle.annulus_inner))
        throw ConfigError("config: annulus radii must satisfy 0 <= inner < outer");
    if (!(preprocess.filter_quantile >= 0.0 && preprocess.filter_quantile <= 1.0))
        throw ConfigError("config: preprocess.filter_quantile must lie in [0, 1]");
    cvae.validate();
    if (!(gp.jitter.initial >= 0.0) || !(gp.jitter.max >= gp.jitter.initial) || !(gp.jitter.max > 0.0))
        throw ConfigError("config: jitter must satisfy 0 <= jitter <= jitter_max, jitter_max > 0");
    if (gp.max_iterations < 0) throw ConfigError("config: gp.max_iterations must be nonnegative");
}

// ================================================================ holdout and reducers

HoldoutSplit holdout_split(const PlumeSet& plumes) {
    if (plumes.size() < 2) throw DimensionError("holdout_split: need at least two plumes");
    plumes.check();
    std::vector<std::size_t> order(plumes.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& pa = plumes.plumes[a];
        const auto& pb = plumes.plumes[b];
        if (pa.time != pb.time) return pa.time < pb.time;
        if (pa.origin.lon != pb.origin.lon) return pa.origin.lon < pb.origin.lon;
        return pa.origin.lat < pb.origin.lat;
    });
    HoldoutSplit s;
    s.kept.grid = plumes.grid;
    s.removed.grid = plumes.grid;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const auto idx = order[pos];
        if (pos % 2 == 0) {
            s.kept.plumes.push_back(plumes.plumes[idx]);
            s.kept_index.push_back(idx);
        } else {
            s.removed.plumes.push_back(plumes.plumes[idx]);
            s.removed_index.push_back(idx);
        }
    }
    return s;
}

std::size_t Reducer::latent_dim() const {
    if (kind == ReducerKind::Eof) {
        if (!eof) throw ContractError("reducer: EOF basis missing");
        return eof->r;
    }
    if (!cvae) throw ContractError("reducer: CVAE model missing");
    return cvae->latent_dim();
}

std::vector<std::vector<double>> Reducer::features(const PlumeSet& canonical) const {
    std::vector<std::vector<double>> out;
    if (kind == ReducerKind::Eof) {
        if (!eof) throw ContractError("reducer: EOF basis missing");
        const auto coeffs = regress_coefficients(*eof, canonical);
        for (Eigen::Index i = 0; i < coeffs.rows(); ++i) {
            std::vector<double> row(static_cast<std::size_t>(coeffs.cols()));
            for (Eigen::Index j = 0; j < coeffs.cols(); ++j) row[static_cast<std::size_t>(j)] = coeffs(i, j);
            out.push_back(std::move(row));
        }
        return out;
    }
    if (!cvae) throw ContractError("reducer: CVAE model missing");
    for (const auto& p : canonical.plumes) out.push_back(encode(*cvae, p).mean);
    return out;
}

std::vector<double> Reducer::reconstruct(std::span<const double> features) const {
    if (kind == ReducerKind::Eof) {
        if (!eof) throw ContractError("reducer: EOF basis missing");
        if (features.size() != eof->r) throw DimensionError("reducer: feature vector length does not match r");
        linalg::Matrix c(1, static_cast<Eigen::Index>(eof->r));
        for (std::size_t j = 0; j < eof->r; ++j) c(0, static_cast<Eigen::Index>(j)) = features[j];
        const linalg::Matrix row = plumeemu::reconstruct(*eof, c);
        return std::vector<double>(row.data(), row.data() + row.size());
    }
    if (!cvae) throw ContractError("reducer: CVAE model missing");
    return decode(*cvae, features);
}

namespace {

PlumeSet subset(const PlumeSet& set, const std::vector<std::size_t>& idx) {
    PlumeSet out;
    out.grid = set.grid;
    for (auto i : idx) out.plumes.push_back(set.plumes[i]);
    return out;
}

}  // namespace

Reducer fit_eof_reducer(const PlumeSet& canonical, std::size_t r, double train_fraction, std::uint64_t seed) {
    const auto [train_idx, unused] = split_indices(canonical.size(), train_fraction, seed);
    Reducer red;
    red.kind = ReducerKind::Eof;
    red.eof = fit_eof(subset(canonical, train_idx), r);
    return red;
}

Reducer train_cvae_reducer(const PlumeSet& canonical, std::size_t r, double train_fraction, const TrainConfig& cfg,
                           TrainResult* history) {
    const auto [train_idx, val_idx] = split_indices(canonical.size(), train_fraction, cfg.seed);
    const PlumeSet train_set = subset(canonical, train_idx), val_set = subset(canonical, val_idx);
    if (canonical.grid.n_lon != canonical.grid.n_lat)
        throw ConfigError("train_cvae: canonical images must be square");
    auto result = train(train_set, CvaeArchitecture::standard(r, canonical.grid.n_lon), cfg, &val_set);
    Reducer red;
    red.kind = ReducerKind::Cvae;
    red.cvae = result.model;
    if (history) *history = std::move(result);
    return red;
}

// ================================================================ bundle and emulation

StPoint st_point(LonLat site, std::int64_t time) { return StPoint{site.lon, site.lat, seconds_to_hours(time)}; }

EmulationBundle build_bundle(const CanonicalSet& kept, Reducer reducer, const PreprocessConfig& preprocess,
                             const GridSpec& output_grid, const GpFitConfig& gp) {
    if (kept.images.size() < 2) throw DimensionError("build_bundle: need at least two canonical plumes");
    if (kept.meta.size() != kept.images.size()) throw DimensionError("build_bundle: metadata count mismatch");
    EmulationBundle b;
    b.preprocess = preprocess;
    b.latent_grid = kept.images.grid;
    b.output_grid = output_grid;
    const auto feats = reducer.features(kept.images);
    const std::size_t r = reducer.latent_dim();
    b.reducer = std::move(reducer);

    std::vector<StPoint> points;
    for (const auto& m : kept.meta) points.push_back(st_point(m.site, m.time));
    std::vector<std::vector<double>> targets(r + 2, std::vector<double>(points.size()));
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t k = 0; k < r; ++k) targets[k][i] = feats[i][k];
        targets[r][i] = kept.meta[i].angle.east;
        targets[r + 1][i] = kept.meta[i].angle.north;
    }
    b.gps.resize(r + 2);
    const auto count = static_cast<long>(r + 2);
    std::vector<std::exception_ptr> errors(r + 2);
#pragma omp parallel for schedule(dynamic)
    for (long k = 0; k < count; ++k) {
        const auto idx = static_cast<std::size_t>(k);
        try {
            GpFitConfig c = gp;
            c.seed = derive_seed(gp.seed, idx);
            b.gps[idx] = fit_mle(points, targets[idx], default_hyper(points, targets[idx]), c);
        } catch (const NumericError& e) {
            const std::string what = idx < r ? "feature " + std::to_string(idx)
                                             : (idx == r ? std::string("east angle component")
                                                         : std::string("north angle component"));
            errors[idx] = std::make_exception_ptr(NumericError("build_bundle: GP fit failed for " + what + ": " +
                                                               e.what()));
        } catch (...) {
            errors[idx] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return b;
}

EmulatedPlume emulate(const EmulationBundle& bundle, LonLat site, std::int64_t time, std::size_t n_samples,
                      std::uint64_t seed) {
    const std::size_t r = bundle.latent_dim();
    if (bundle.gps.size() != r + 2)
        throw ContractError("emulate: bundle has " + std::to_string(bundle.gps.size()) + " GP models, expected " +
                            std::to_string(r + 2));
    if (n_samples == 0) throw ConfigError("emulate: n_samples must be positive");
    const StPoint q = st_point(site, time);
    std::vector<GpPrediction> post;
    post.reserve(r + 2);
    for (const auto& gp : bundle.gps) post.push_back(posterior(gp, q));

    IdwConfig quiet = bundle.preprocess.idw;
    quiet.warn_on_miss = false;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t k = bundle.output_grid.size();
    std::vector<std::vector<double>> samples;
    samples.reserve(n_samples);
    std::vector<double> z(r);
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (std::size_t f = 0; f < r; ++f) z[f] = post[f].mean + std::sqrt(post[f].variance) * normal(rng);
        const double east = post[r].mean + std::sqrt(post[r].variance) * normal(rng);
        const double north = post[r + 1].mean + std::sqrt(post[r + 1].variance) * normal(rng);
        const double angle = AngleEstimate::from_components(east, north).angle;

        Plume canon = Plume::zeros(bundle.latent_grid);
        canon.values = bundle.reducer.reconstruct(z);
        const Plume rotated = rotate_to_canonical(canon, -angle, quiet);
        const Plume placed = translate_to_site(rotated, site);
        samples.push_back(truncate_negatives(idw_resample(placed, bundle.output_grid, quiet)).values);
    }

    EmulatedPlume out;
    out.n_samples = n_samples;
    out.mean = Plume::zeros(bundle.output_grid, site, time);
    out.stderr_plume = Plume::zeros(bundle.output_grid, site, time);
    const double n = static_cast<double>(n_samples);
    for (std::size_t c = 0; c < k; ++c) {
        double sum = 0.0;
        for (const auto& smp : samples) sum += smp[c];
        const double mean = sum / n;
        double ss = 0.0;
        for (const auto& smp : samples) ss += (smp[c] - mean) * (smp[c] - mean);
        out.mean.values[c] = mean;
        out.stderr_plume.values[c] = n_samples > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    }
    return out;
}

PlumeSet nearest_copy_baseline(const PlumeSet& kept, const PlumeSet& queries) {
    if (kept.empty()) throw DimensionError("nearest_copy_baseline: no kept plumes");
    auto stdev = [&](auto get) {
        double m = 0.0;
        for (const auto& p : kept.plumes) m += get(p);
        m /= static_cast<double>(kept.size());
        double v = 0.0;
        for (const auto& p : kept.plumes) v += (get(p) - m) * (get(p) - m);
        const double sd = std::sqrt(v / static_cast<double>(kept.size()));
        return sd > 0.0 ? sd : 1.0;
    };
    const double s_lon = stdev([](const Plume& p) { return p.origin.lon; });
    const double s_lat = stdev([](const Plume& p) { return p.origin.lat; });
    const double s_t = stdev([](const Plume& p) { return seconds_to_hours(p.time); });
    IdwConfig quiet;
    quiet.warn_on_miss = false;
    PlumeSet out;
    out.grid = queries.grid;
    for (const auto& q : queries.plumes) {
        std::size_t best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < kept.size(); ++i) {
            const auto& p = kept.plumes[i];
            const double dx = (p.origin.lon - q.origin.lon) / s_lon, dy = (p.origin.lat - q.origin.lat) / s_lat;
            const double dt = (seconds_to_hours(p.time) - seconds_to_hours(q.time)) / s_t;
            const double d = dx * dx + dy * dy + dt * dt;
            if (d < best_d) {
                best_d = d;
                best = i;
            }
        }
        Plume copy = truncate_negatives(idw_resample(translate_to_site(kept.plumes[best], q.origin), q.grid, quiet));
        copy.origin = q.origin;
        copy.time = q.time;
        copy.departure_angle.reset();
        out.plumes.push_back(std::move(copy));
    }
    return out;
}

// ================================================================ evaluation

namespace {

double sum_column(const MetricsTable& t, double MetricsRow::*col) {
    double s = 0.0;
    for (const auto& r : t.rows) s += r.*col;
    return s;
}

}  // namespace

double MetricsTable::sum_mse_eof() const { return sum_column(*this, &MetricsRow::mse_eof); }
double MetricsTable::sum_mse_cvae() const { return sum_column(*this, &MetricsRow::mse_cvae); }

MetricsTable evaluate(const PlumeSet& truth, const std::vector<std::size_t>& plume_index, const PlumeSet* eof,
                      const PlumeSet* cvae) {
    if (plume_index.size() != truth.size())
        throw DimensionError("evaluate: " + std::to_string(plume_index.size()) + " indices for " +
                             std::to_string(truth.size()) + " plumes");
    for (const PlumeSet* s : {eof, cvae})
        if (s && s->size() != truth.size())
            throw DimensionError("evaluate: emulation count " + std::to_string(s->size()) + " does not match " +
                                 std::to_string(truth.size()) + " held-out plumes");
    const double nan = std::numeric_limits<double>::quiet_NaN();
    MetricsTable t;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto& p = truth.plumes[i];
        MetricsRow row;
        row.plume_index = plume_index[i];
        row.site_lon = p.origin.lon;
        row.site_lat = p.origin.lat;
        row.time = p.time;
        row.mse_eof = eof ? mse(p, eof->plumes[i]) : nan;
        row.mse_cvae = cvae ? mse(p, cvae->plumes[i]) : nan;
        t.rows.push_back(row);
    }
    return t;
}

namespace {
constexpr const char* kMetricsHeader = "plume_index,site_lon,site_lat,time,mse_eof,mse_cvae";

std::string format_metric(double v) { return std::isnan(v) ? std::string("nan") : detail::format_double(v); }
}  // namespace

void write_metrics(std::ostream& os, const MetricsTable& table) {
    os << kMetricsHeader << '\n';
    for (const auto& r : table.rows)
        os << r.plume_index << ',' << detail::format_double(r.site_lon) << ',' << detail::format_double(r.site_lat)
           << ',' << r.time << ',' << format_metric(r.mse_eof) << ',' << format_metric(r.mse_cvae) << '\n';
    if (!os) throw ConfigError("write_metrics: stream write failed");
}

MetricsTable read_metrics(std::istream& is) {
    const char* what = "metrics.csv";
    if (detail::read_line(is, what) != kMetricsHeader) throw ConfigError("metrics.csv: unexpected header");
    MetricsTable t;
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = detail::split(line, ',');
        if (f.size() != 6) throw ConfigError("metrics.csv: expected 6 fields in '" + line + "'");
        MetricsRow r;
        const auto idx = detail::parse_int(f[0], what);
        if (idx < 0) throw ConfigError("metrics.csv: negative plume index");
        r.plume_index = static_cast<std::size_t>(idx);
        r.site_lon = detail::parse_double(f[1], what);
        r.site_lat = detail::parse_double(f[2], what);
        r.time = detail::parse_int(f[3], what);
        r.mse_eof = detail::parse_double(f[4], what);
        r.mse_cvae = detail::parse_double(f[5], what);
        t.rows.push_back(r);
    }
    return t;
}

void save_metrics(const std::string& path, const MetricsTable& table) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open '" + path + "' for writing");
    write_metrics(os, table);
}

MetricsTable load_metrics(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open '" + path + "'");
    return read_metrics(is);
}

void plot(const Plume& p, const std::string& prefix) {
    p.check();
    const auto& g = p.grid;
    double hi = -std::numeric_limits<double>::infinity(), lo = std::numeric_limits<double>::infinity();
    for (double v : p.values)
        if (v > 0.0) {
            hi = std::max(hi, std::log10(v));
            lo = std::min(lo, std::log10(v));
        }
    std::vector<unsigned char> pixels(g.size(), 0);
    for (std::size_t j = 0; j < g.n_lat; ++j)
        for (std::size_t i = 0; i < g.n_lon; ++i) {
            const double v = p.values[g.index(i, j)];
            unsigned char px = 0;
            if (v > 0.0) {
                const double t = hi > lo ? (std::log10(v) - lo) / (hi - lo) : 1.0;
                px = static_cast<unsigned char>(1 + std::lround(t * 254.0));
            }
            pixels[(g.n_lat - 1 - j) * g.n_lon + i] = px;
        }
    {
        std::ofstream os(prefix + ".pgm", std::ios::binary);
        if (!os) throw ConfigError("plot: cannot write '" + prefix + ".pgm'");
        os << "P5\n" << g.n_lon << ' ' << g.n_lat << "\n255\n";
        os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
        if (!os) throw ConfigError("plot: write failed for '" + prefix + ".pgm'");
    }
    std::ofstream csv(prefix + ".csv");
    if (!csv) throw ConfigError("plot: cannot write '" + prefix + ".csv'");
    csv << "lon,lat,value\n";
    for (std::size_t j = 0; j < g.n_lat; ++j)
        for (std::size_t i = 0; i < g.n_lon; ++i)
            csv << detail::format_double(g.center_lon(i)) << ',' << detail::format_double(g.center_lat(j)) << ','
                << detail::format_double(p.values[g.index(i, j)]) << '\n';
    if (!csv) throw ConfigError("plot: write failed for '" + prefix + ".csv'");
}

void plot(const EmulatedPlume& p, const std::string& prefix) {
    plot(p.mean, prefix + "_mean");
    plot(p.stderr_plume, prefix + "_stderr");
}

// ================================================================ bundle persistence

namespace {

constexpr const char* kBundleMagic = "BUNDLE1";

std::string reducer_file(ReducerKind k) { return k == ReducerKind::Eof ? "reducer.eofbasis" : "reducer.cvae"; }

std::vector<std::string> fields_of(std::istream& is, const std::string& key, std::size_t n) {
    const auto f = detail::split(detail::read_line(is, kBundleMagic), ',');
    if (f.empty() || f[0] != key || f.size() != n + 1)
        throw ConfigError(std::string(kBundleMagic) + ": expected '" + key + "' line with " + std::to_string(n) +
                          " fields");
    return {f.begin() + 1, f.end()};
}

}  // namespace

void save_bundle(const std::string& dir, const EmulationBundle& bundle) {
    fs::create_directories(dir);
    const auto& r = bundle.reducer;
    if (r.kind == ReducerKind::Eof) {
        save_eof_basis((fs::path(dir) / reducer_file(r.kind)).string(), *r.eof);
    } else {
        save_cvae((fs::path(dir) / reducer_file(r.kind)).string(), *r.cvae);
    }
    std::ofstream os(fs::path(dir) / "bundle.txt");
    if (!os) throw ConfigError("cannot write bundle in '" + dir + "'");
    using detail::format_double;
    const auto& pp = bundle.preprocess;
    os << kBundleMagic << '\n';
    os << "reducer," << to_string(r.kind) << '\n';
    os << "latent_dim," << bundle.latent_dim() << '\n';
    os << "latent_" << detail::format_grid(bundle.latent_grid) << '\n';
    os << "output_" << detail::format_grid(bundle.output_grid) << '\n';
    os << "preprocess," << format_double(pp.angle.annulus_inner) << ',' << format_double(pp.angle.annulus_outer) << ','
       << format_double(pp.angle.window_radius) << ',' << format_double(pp.idw.power) << ',' << pp.idw.k_neighbors
       << ',' << pp.target_res << ',' << format_double(pp.filter_quantile) << ',' << pp.filter_min_cells << ','
       << (pp.apply_filter ? 1 : 0) << '\n';
    os << "gps," << bundle.gps.size() << '\n';
    for (std::size_t k = 0; k < bundle.gps.size(); ++k) {
        const auto& m = bundle.gps[k];
        os << "gp," << format_double(m.hyper.log_variance) << ',' << format_double(m.hyper.log_length_space) << ','
           << format_double(m.hyper.log_length_time) << ',' << format_double(m.jitter) << ','
           << m.train_points.size() << '\n';
        for (std::size_t i = 0; i < m.train_points.size(); ++i) {
            const auto& p = m.train_points[i];
            os << format_double(p.lon) << ',' << format_double(p.lat) << ',' << format_double(p.time) << ','
               << format_double(m.train_targets[i]) << '\n';
        }
    }
    if (!os) throw ConfigError("bundle write failed in '" + dir + "'");
}

EmulationBundle load_bundle(const std::string& dir) {
    std::ifstream is(fs::path(dir) / "bundle.txt");
    if (!is) throw ConfigError("cannot open bundle in '" + dir + "'");
    using detail::parse_double;
    using detail::parse_int;
    const char* what = kBundleMagic;
    if (detail::read_line(is, what) != kBundleMagic) throw ConfigError("not a bundle (bad magic)");
    EmulationBundle b;
    b.reducer.kind = reducer_from_string(fields_of(is, "reducer", 1)[0]);
    const auto r = parse_int(fields_of(is, "latent_dim", 1)[0], what);
    auto grid_line = [&](const std::string& prefix) {
        auto line = detail::read_line(is, what);
        if (line.rfind(prefix, 0) != 0) throw ConfigError("bundle: expected " + prefix + "grid line");
        return detail::parse_grid(line.substr(prefix.size()), what);
    };
    b.latent_grid = grid_line("latent_");
    b.output_grid = grid_line("output_");
    const auto pp = fields_of(is, "preprocess", 9);
    b.preprocess.angle.annulus_inner = parse_double(pp[0], what);
    b.preprocess.angle.annulus_outer = parse_double(pp[1], what);
    b.preprocess.angle.window_radius = parse_double(pp[2], what);
    b.preprocess.idw.power = parse_double(pp[3], what);
    b.preprocess.idw.k_neighbors = static_cast<std::size_t>(parse_int(pp[4], what));
    b.preprocess.target_res = static_cast<std::size_t>(parse_int(pp[5], what));
    b.preprocess.filter_quantile = parse_double(pp[6], what);
    b.preprocess.filter_min_cells = static_cast<std::size_t>(parse_int(pp[7], what));
    b.preprocess.apply_filter = parse_int(pp[8], what) != 0;
    const auto n_gps = parse_int(fields_of(is, "gps", 1)[0], what);
    if (r <= 0 || n_gps != r + 2) throw ConfigError("bundle: GP count does not match latent dimension + 2");
    for (long long k = 0; k < n_gps; ++k) {
        const auto f = fields_of(is, "gp", 5);
        const GpHyper h{parse_double(f[0], what), parse_double(f[1], what), parse_double(f[2], what)};
        const double jitter = parse_double(f[3], what);
        const auto n = parse_int(f[4], what);
        if (n < 1) throw ConfigError("bundle: GP without training data");
        std::vector<StPoint> pts;
        std::vector<double> targets;
        for (long long i = 0; i < n; ++i) {
            const auto row = detail::split(detail::read_line(is, what), ',');
            if (row.size() != 4) throw ConfigError("bundle: malformed GP training row");
            pts.push_back({parse_double(row[0], what), parse_double(row[1], what), parse_double(row[2], what)});
            targets.push_back(parse_double(row[3], what));
        }
        const double rel = jitter / h.variance();
        b.gps.push_back(condition(pts, targets, h, JitterPolicy{rel, std::max(rel, 1e-4)}));
    }
    const auto path = (fs::path(dir) / reducer_file(b.reducer.kind)).string();
    if (b.reducer.kind == ReducerKind::Eof) {
        b.reducer.eof = load_eof_basis(path);
    } else {
        b.reducer.cvae = load_cvae(path);
    }
    if (b.latent_dim() != static_cast<std::size_t>(r)) throw ConfigError("bundle: reducer latent dimension mismatch");
    return b;
}

// ================================================================ end to end

PlumeSet synthesize(const SynthConfig& cfg, std::uint64_t seed) {
    constexpr std::int64_t kStart = 1577836800;  // 2020-01-01T00:00:00Z
    const TimeRange times{kStart, kStart + static_cast<std::int64_t>(std::llround(cfg.days * 86400.0))};
    return generate_dataset(cfg.n_plumes, central_region(cfg.grid), times, cfg.wind, cfg.grid, seed, cfg.shape);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write '" + path.string() + "'");
    os << text;
}

double min_value(const Plume& p) { return p.values.empty() ? 0.0 : *std::min_element(p.values.begin(), p.values.end()); }

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path root(out_dir);
    fs::create_directories(root / "models");
    fs::create_directories(root / "plots");
    {
        std::ofstream os(root / "config.txt");
        if (!os) throw ConfigError("cannot write config.txt in '" + out_dir + "'");
        cfg.to_config().write(os);
    }

    ExperimentResult res;
    const PlumeSet data = synthesize(cfg.synth, cfg.seed);
    const HoldoutSplit split = holdout_split(data);
    const CanonicalSet canonical = preprocess(split.kept, cfg.preprocess);
    res.n_kept = split.kept.size();
    res.n_removed = split.removed.size();
    res.n_canonical = canonical.images.size();
    if (canonical.images.size() < 4) throw NumericError("run: fewer than four plumes survived preprocessing");

    const PlumeSet baseline = nearest_copy_baseline(split.kept, split.removed);
    res.sum_mse_baseline = sum_mse(split.removed, baseline);
    res.min_output_value = std::numeric_limits<double>::infinity();
    for (const auto& p : baseline.plumes) res.min_output_value = std::min(res.min_output_value, min_value(p));

    std::optional<PlumeSet> emulated_eof, emulated_cvae;
    for (const ReducerKind kind : cfg.reducers) {
        Reducer reducer;
        std::string history;
        if (kind == ReducerKind::Eof) {
            reducer = fit_eof_reducer(canonical.images, cfg.r, cfg.train_fraction, derive_seed(cfg.seed, 2));
        } else {
            TrainConfig tc = cfg.cvae;
            tc.seed = derive_seed(cfg.seed, 3);
            TrainResult hist;
            reducer = train_cvae_reducer(canonical.images, cfg.r, cfg.train_fraction, tc, &hist);
            std::ostringstream os;
            os << "restart,epoch,train_loss,validation_mse\n";
            for (std::size_t k = 0; k < hist.restarts.size(); ++k)
                for (std::size_t e = 0; e < hist.restarts[k].train_loss.size(); ++e)
                    os << k << ',' << e + 1 << ',' << detail::format_double(hist.restarts[k].train_loss[e]) << ','
                       << (e < hist.restarts[k].validation_mse.size()
                               ? detail::format_double(hist.restarts[k].validation_mse[e])
                               : std::string("nan"))
                       << '\n';
            history = os.str();
        }
        GpFitConfig gp = cfg.gp;
        gp.seed = derive_seed(cfg.seed, 4);
        const EmulationBundle bundle = build_bundle(canonical, std::move(reducer), cfg.preprocess, data.grid, gp);
        save_bundle((root / "models" / ("bundle_" + to_string(kind))).string(), bundle);
        if (!history.empty()) write_text(root / "models" / "cvae_history.csv", history);

        PlumeSet means;
        means.grid = data.grid;
        means.plumes.resize(split.removed.size());
        std::vector<double> mins(split.removed.size(), 0.0);
        std::vector<std::exception_ptr> errors(split.removed.size());
        const auto count = static_cast<long>(split.removed.size());
#pragma omp parallel for schedule(dynamic)
        for (long i = 0; i < count; ++i) {
            const auto idx = static_cast<std::size_t>(i);
            try {
                const auto& q = split.removed.plumes[idx];
                const auto em = emulate(bundle, q.origin, q.time, cfg.n_samples,
                                        derive_seed(cfg.seed, 5, split.removed_index[idx]));
                mins[idx] = std::min(min_value(em.mean), min_value(em.stderr_plume));
                means.plumes[idx] = em.mean;
                if (idx == 0) plot(em, (root / "plots" / ("removed0_" + to_string(kind))).string());
            } catch (...) {
                errors[idx] = std::current_exception();
            }
        }
        for (const auto& e : errors)
            if (e) std::rethrow_exception(e);
        for (double m : mins) res.min_output_value = std::min(res.min_output_value, m);
        (kind == ReducerKind::Eof ? emulated_eof : emulated_cvae) = std::move(means);
    }

    res.metrics = evaluate(split.removed, split.removed_index, emulated_eof ? &*emulated_eof : nullptr,
                           emulated_cvae ? &*emulated_cvae : nullptr);
    if (emulated_eof) res.sum_mse_eof = res.metrics.sum_mse_eof();
    if (emulated_cvae) res.sum_mse_cvae = res.metrics.sum_mse_cvae();
    save_metrics((root / "metrics.csv").string(), res.metrics);
    plot(split.removed.plumes.front(), (root / "plots" / "removed0_truth").string());
    plot(baseline.plumes.front(), (root / "plots" / "removed0_baseline").string());

    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream summary;
    summary << "plumes_total," << data.size() << '\n'
            << "plumes_kept," << res.n_kept << '\n'
            << "plumes_removed," << res.n_removed << '\n'
            << "plumes_canonical," << res.n_canonical << '\n'
            << "sum_mse_baseline," << detail::format_double(res.sum_mse_baseline) << '\n';
    if (res.sum_mse_eof) summary << "sum_mse_eof," << detail::format_double(*res.sum_mse_eof) << '\n';
    if (res.sum_mse_cvae) summary << "sum_mse_cvae," << detail::format_double(*res.sum_mse_cvae) << '\n';
    summary << "min_output_value," << detail::format_double(res.min_output_value) << '\n'
            << "seconds," << res.seconds << '\n';
    write_text(root / "summary.txt", summary.str());
    return res;
}

}  // namespace plumeemu
