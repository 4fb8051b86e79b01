#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "plumeemu/cvae.hpp"
#include "plumeemu/eof.hpp"
#include "plumeemu/gp.hpp"
#include "plumeemu/plume.hpp"
#include "plumeemu/preprocess.hpp"
#include "plumeemu/synth.hpp"

namespace plumeemu {

// ---------------------------------------------------------------- configuration

/// Flat view of a sectioned key=value file. Keys are stored as "section.key";
/// lines before any [section] header belong to section "run".
class ConfigFile {
public:
    static ConfigFile parse(std::istream& is);
    static ConfigFile load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    std::optional<std::string> get(const std::string& key) const;
    const std::map<std::string, std::string>& values() const { return values_; }

    /// Writes sections in alphabetical order.
    void write(std::ostream& os) const;

private:
    std::map<std::string, std::string> values_;
};

enum class ReducerKind { Eof, Cvae };

std::string to_string(ReducerKind k);
ReducerKind reducer_from_string(const std::string& s);

struct SynthConfig {
    std::size_t n_plumes = 400;
    double days = 30.0;
    GridSpec grid{64, 64, 0.0, 0.0, 0.352, 0.234};
    WindField wind;
    PlumeShape shape;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::vector<ReducerKind> reducers{ReducerKind::Eof, ReducerKind::Cvae};
    std::size_t r = 8;
    std::size_t n_samples = 100;
    SynthConfig synth;
    PreprocessConfig preprocess;
    TrainConfig cvae;
    /// Fraction of kept canonical images used to fit the reducers.
    double train_fraction = 0.7;
    GpFitConfig gp;

    ExperimentConfig();
    /// Unknown keys and malformed values raise ConfigError.
    static ExperimentConfig from_config(const ConfigFile& file);
    ConfigFile to_config() const;
    void validate() const;
};

// ---------------------------------------------------------------- experiment steps

struct HoldoutSplit {
    PlumeSet kept;
    PlumeSet removed;
    /// Positions in the input set.
    std::vector<std::size_t> kept_index;
    std::vector<std::size_t> removed_index;
};

/// Stable sort by (time, origin lon, origin lat), then even positions are kept and odd removed.
HoldoutSplit holdout_split(const PlumeSet& plumes);

/// A fitted dimension reducer: EOF basis or trained CVAE.
struct Reducer {
    ReducerKind kind = ReducerKind::Eof;
    std::optional<EofBasis> eof;
    std::optional<CvaeModel> cvae;

    std::size_t latent_dim() const;
    /// Regression coefficients (EOF) or variational means (CVAE), one row per image.
    std::vector<std::vector<double>> features(const PlumeSet& canonical) const;
    /// Canonical image values for one feature vector.
    std::vector<double> reconstruct(std::span<const double> features) const;
};

/// Fits the EOF basis on the training part of the canonical images.
Reducer fit_eof_reducer(const PlumeSet& canonical, std::size_t r, double train_fraction, std::uint64_t seed);
/// Trains the CVAE on the training part; the rest is monitored as validation.
Reducer train_cvae_reducer(const PlumeSet& canonical, std::size_t r, double train_fraction, const TrainConfig& cfg,
                           TrainResult* history = nullptr);

struct EmulationBundle {
    Reducer reducer;
    /// r feature models followed by the east and north angle-component models.
    std::vector<GpModel> gps;
    PreprocessConfig preprocess;
    GridSpec latent_grid;
    GridSpec output_grid;

    std::size_t latent_dim() const { return reducer.latent_dim(); }
};

/// Fits r + 2 GP models to the canonical set's features and departure-angle components.
EmulationBundle build_bundle(const CanonicalSet& kept, Reducer reducer, const PreprocessConfig& preprocess,
                             const GridSpec& output_grid, const GpFitConfig& gp);

/// Space-time point of a plume's origin, with time in hours.
StPoint st_point(LonLat site, std::int64_t time);

struct EmulatedPlume {
    Plume mean;
    Plume stderr_plume;
    std::size_t n_samples = 0;
};

EmulatedPlume emulate(const EmulationBundle& bundle, LonLat site, std::int64_t time, std::size_t n_samples,
                      std::uint64_t seed);

/// Copy of the kept plume nearest in standardized (lon, lat, time), re-anchored at each
/// query's site and resampled onto the query grid.
PlumeSet nearest_copy_baseline(const PlumeSet& kept, const PlumeSet& queries);

// ---------------------------------------------------------------- evaluation

struct MetricsRow {
    std::size_t plume_index = 0;
    double site_lon = 0.0;
    double site_lat = 0.0;
    std::int64_t time = 0;
    /// NaN when the method was not run.
    double mse_eof = 0.0;
    double mse_cvae = 0.0;
};

struct MetricsTable {
    std::vector<MetricsRow> rows;

    double sum_mse_eof() const;
    double sum_mse_cvae() const;
};

/// Per-plume mse of each available method against the truth; an absent method gets NaN.
MetricsTable evaluate(const PlumeSet& truth, const std::vector<std::size_t>& plume_index, const PlumeSet* eof,
                      const PlumeSet* cvae);

void write_metrics(std::ostream& os, const MetricsTable& table);
MetricsTable read_metrics(std::istream& is);
void save_metrics(const std::string& path, const MetricsTable& table);
MetricsTable load_metrics(const std::string& path);

/// Writes <prefix>.pgm (log10 gray scale, binary P5) and <prefix>.csv (lon,lat,value).
void plot(const Plume& p, const std::string& prefix);
void plot(const EmulatedPlume& p, const std::string& prefix);

// ---------------------------------------------------------------- persistence

/// Bundle directory: bundle.txt (GP hyperparameters and training data, grids,
/// preprocessing settings) plus the reducer artifact.
void save_bundle(const std::string& dir, const EmulationBundle& bundle);
EmulationBundle load_bundle(const std::string& dir);

// ---------------------------------------------------------------- end to end

struct ExperimentResult {
    MetricsTable metrics;
    double sum_mse_baseline = 0.0;
    std::optional<double> sum_mse_eof;
    std::optional<double> sum_mse_cvae;
    /// Smallest value across every emitted plume.
    double min_output_value = 0.0;
    std::size_t n_kept = 0;
    std::size_t n_removed = 0;
    std::size_t n_canonical = 0;
    double seconds = 0.0;
};

/// Runs synth, holdout, preprocessing, reducers, bundles, emulation, and evaluation, writing
/// <out_dir>/{config.txt, metrics.csv, summary.txt, models/, plots/}.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir);

PlumeSet synthesize(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace plumeemu
