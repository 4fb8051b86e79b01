// Command-line front end for the plume emulation pipeline.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "plumeemu/error.hpp"
#include "plumeemu/pipeline.hpp"

namespace fs = std::filesystem;
using namespace plumeemu;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct SharedOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = "run";
    std::string reducer = "eof";
    std::optional<std::size_t> r;
    std::optional<std::size_t> n_samples;
    std::optional<double> jitter;
};

struct PreprocessOptions {
    std::optional<double> annulus_inner, annulus_outer, idw_power;
    std::optional<std::size_t> idw_k, target_res;
};

struct Paths {
    fs::path root;
    fs::path data() const { return root / "data"; }
    fs::path models() const { return root / "models"; }
    fs::path plots() const { return root / "plots"; }
};

ExperimentConfig resolve_config(const SharedOptions& s, const PreprocessOptions& p) {
    ExperimentConfig cfg = s.config.empty() ? ExperimentConfig{} : ExperimentConfig::from_config(ConfigFile::load(s.config));
    if (s.seed) cfg.seed = *s.seed;
    if (s.r) cfg.r = *s.r;
    if (s.n_samples) cfg.n_samples = *s.n_samples;
    if (s.jitter) cfg.gp.jitter.initial = *s.jitter;
    if (p.annulus_inner) cfg.preprocess.angle.annulus_inner = *p.annulus_inner;
    if (p.annulus_outer) cfg.preprocess.angle.annulus_outer = *p.annulus_outer;
    if (p.idw_power) cfg.preprocess.idw.power = *p.idw_power;
    if (p.idw_k) cfg.preprocess.idw.k_neighbors = *p.idw_k;
    if (p.target_res) cfg.preprocess.target_res = *p.target_res;
    cfg.validate();
    return cfg;
}

Paths prepare_output(const SharedOptions& s, const ExperimentConfig& cfg) {
    Paths p{fs::path(s.out_dir)};
    fs::create_directories(p.data());
    fs::create_directories(p.models());
    fs::create_directories(p.plots());
    std::ofstream os(p.root / "config.txt");
    if (!os) throw ConfigError("cannot write config.txt in '" + s.out_dir + "'");
    cfg.to_config().write(os);
    return p;
}

std::string or_default(const std::string& value, const fs::path& fallback) {
    return value.empty() ? fallback.string() : value;
}

void add_preprocess_flags(CLI::App* cmd, PreprocessOptions& p) {
    cmd->add_option("--annulus-inner", p.annulus_inner, "Inner annulus radius for angle estimation (degrees)");
    cmd->add_option("--annulus-outer", p.annulus_outer, "Outer annulus radius for angle estimation (degrees)");
    cmd->add_option("--idw-power", p.idw_power, "Inverse-distance weighting power");
    cmd->add_option("--idw-k", p.idw_k, "Inverse-distance weighting neighbour count");
    cmd->add_option("--target-res", p.target_res, "Side length of canonical images");
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Plume emulation: reduce sensitivity plumes, emulate latent codes with GPs, reconstruct."};
    app.require_subcommand(1);
    app.fallthrough();

    SharedOptions shared;
    PreprocessOptions pre;
    app.add_option("--config", shared.config, "Sectioned key=value configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", shared.seed, "Master random seed");
    app.add_option("--out-dir", shared.out_dir, "Run directory (config.txt, metrics.csv, models/, plots/)");
    app.add_option("--reducer", shared.reducer, "Dimension reducer")->check(CLI::IsMember({"eof", "cvae"}));
    app.add_option("--r", shared.r, "Latent dimension");
    app.add_option("--n-samples", shared.n_samples, "Monte Carlo samples per emulated plume");
    app.add_option("--jitter", shared.jitter, "Initial GP jitter relative to the kernel variance");

    std::string input, output, model, bundle_dir, queries, truth, eof_path, cvae_path, kept_path;
    std::optional<std::size_t> n_plumes, epochs, restarts, batch_size, index;
    bool no_holdout = false, verbose = false;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic PLUMESET1 dataset");
    synth->add_option("--output", output, "Dataset path (default <out-dir>/data/dataset.plumeset)");
    synth->add_option("--n-plumes", n_plumes, "Number of plumes");

    auto* prep = app.add_subcommand("preprocess", "Hold out every second plume and canonicalize the kept set");
    prep->add_option("--input", input, "Dataset path (default <out-dir>/data/dataset.plumeset)");
    prep->add_flag("--no-holdout", no_holdout, "Canonicalize every plume without a holdout split");
    add_preprocess_flags(prep, pre);

    auto* fit = app.add_subcommand("fit-eof", "Fit an EOF basis to canonical images");
    fit->add_option("--input", input, "Canonical set (default <out-dir>/data/canonical.plumeset)");
    fit->add_option("--output", output, "Basis path (default <out-dir>/models/eof.basis)");

    auto* trn = app.add_subcommand("train-cvae", "Train the convolutional variational autoencoder");
    trn->add_option("--input", input, "Canonical set (default <out-dir>/data/canonical.plumeset)");
    trn->add_option("--output", output, "Model path (default <out-dir>/models/cvae.model)");
    trn->add_option("--epochs", epochs, "Epochs per restart");
    trn->add_option("--restarts", restarts, "Independent restarts");
    trn->add_option("--batch-size", batch_size, "Mini-batch size");
    trn->add_flag("--verbose", verbose, "Log per-epoch loss");

    auto* bld = app.add_subcommand("build-bundle", "Fit the r+2 GP emulators for a trained reducer");
    bld->add_option("--input", input, "Canonical set (default <out-dir>/data/canonical.plumeset)");
    bld->add_option("--model", model, "Reducer artifact (default <out-dir>/models/{eof.basis|cvae.model})");
    bld->add_option("--grid-from", queries, "PLUMESET1 file whose grid is the output grid (default removed set)");
    bld->add_option("--output", bundle_dir, "Bundle directory (default <out-dir>/models/bundle_<reducer>)");
    add_preprocess_flags(bld, pre);

    auto* emu = app.add_subcommand("emulate", "Emulate plumes at the sites and times of a query set");
    emu->add_option("--bundle", bundle_dir, "Bundle directory (default <out-dir>/models/bundle_<reducer>)");
    emu->add_option("--queries", queries, "PLUMESET1 query set (default <out-dir>/data/removed.plumeset)");
    emu->add_option("--output", output, "Mean plumes (default <out-dir>/data/emulated_<reducer>.plumeset)");

    auto* evl = app.add_subcommand("evaluate", "Score emulations against held-out truth");
    evl->add_option("--truth", truth, "Held-out plumes (default <out-dir>/data/removed.plumeset)");
    evl->add_option("--eof", eof_path, "EOF emulations (default <out-dir>/data/emulated_eof.plumeset if present)");
    evl->add_option("--cvae", cvae_path, "CVAE emulations (default <out-dir>/data/emulated_cvae.plumeset if present)");
    evl->add_option("--kept", kept_path, "Kept plumes for the nearest-copy baseline (default <out-dir>/data/kept.plumeset)");
    evl->add_option("--output", output, "Metrics table (default <out-dir>/metrics.csv)");

    auto* plt = app.add_subcommand("plot", "Write a log-scaled PGM image and lon,lat,value CSV of one plume");
    plt->add_option("--input", input, "PLUMESET1 file")->required();
    plt->add_option("--index", index, "Plume index (default 0)");
    plt->add_option("--output", output, "Output prefix (default <out-dir>/plots/<stem>_<index>)");

    auto* run = app.add_subcommand("run", "Run the complete hold-out experiment");
    run->add_option("--epochs", epochs, "CVAE epochs per restart");
    run->add_option("--restarts", restarts, "CVAE restarts");
    add_preprocess_flags(run, pre);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    ExperimentConfig cfg = resolve_config(shared, pre);
    if (n_plumes) cfg.synth.n_plumes = *n_plumes;
    if (epochs) cfg.cvae.epochs = *epochs;
    if (restarts) cfg.cvae.restarts = *restarts;
    if (batch_size) cfg.cvae.batch_size = *batch_size;
    cfg.cvae.verbose = verbose;
    cfg.validate();
    const ReducerKind kind = reducer_from_string(shared.reducer);
    const Paths paths = prepare_output(shared, cfg);
    const std::string tag = to_string(kind);

    if (*synth) {
        const auto path = or_default(output, paths.data() / "dataset.plumeset");
        save_plumeset(path, synthesize(cfg.synth, cfg.seed));
        std::cout << "wrote " << cfg.synth.n_plumes << " plumes to " << path << '\n';
    } else if (*prep) {
        const PlumeSet data = load_plumeset(or_default(input, paths.data() / "dataset.plumeset"));
        PlumeSet kept = data;
        if (!no_holdout) {
            const auto split = holdout_split(data);
            save_plumeset((paths.data() / "kept.plumeset").string(), split.kept);
            save_plumeset((paths.data() / "removed.plumeset").string(), split.removed);
            kept = split.kept;
        }
        const auto canonical = preprocess(kept, cfg.preprocess);
        save_plumeset((paths.data() / "canonical.plumeset").string(), canonical_to_plumeset(canonical));
        std::cout << "canonicalized " << canonical.images.size() << " of " << kept.size() << " plumes\n";
    } else if (*fit) {
        const auto canonical = load_plumeset(or_default(input, paths.data() / "canonical.plumeset"));
        const auto red = fit_eof_reducer(canonical, cfg.r, cfg.train_fraction, cfg.seed);
        const auto path = or_default(output, paths.models() / "eof.basis");
        save_eof_basis(path, *red.eof);
        std::cout << "wrote EOF basis (r = " << cfg.r << ") to " << path << '\n';
    } else if (*trn) {
        const auto canonical = load_plumeset(or_default(input, paths.data() / "canonical.plumeset"));
        TrainConfig tc = cfg.cvae;
        tc.seed = cfg.seed;
        TrainResult hist;
        const auto red = train_cvae_reducer(canonical, cfg.r, cfg.train_fraction, tc, &hist);
        const auto path = or_default(output, paths.models() / "cvae.model");
        save_cvae(path, *red.cvae);
        std::cout << "best restart " << hist.best_restart << " with training mse "
                  << hist.restarts[hist.best_restart].final_train_mse << "; wrote " << path << '\n';
    } else if (*bld) {
        const auto canonical = canonical_from_plumeset(load_plumeset(or_default(input, paths.data() / "canonical.plumeset")));
        Reducer red;
        red.kind = kind;
        if (kind == ReducerKind::Eof) {
            red.eof = load_eof_basis(or_default(model, paths.models() / "eof.basis"));
        } else {
            red.cvae = load_cvae(or_default(model, paths.models() / "cvae.model"));
        }
        const auto grid = load_plumeset(or_default(queries, paths.data() / "removed.plumeset")).grid;
        GpFitConfig gp = cfg.gp;
        gp.seed = cfg.seed;
        const auto bundle = build_bundle(canonical, std::move(red), cfg.preprocess, grid, gp);
        const auto dir = or_default(bundle_dir, paths.models() / ("bundle_" + tag));
        save_bundle(dir, bundle);
        std::cout << "wrote " << bundle.gps.size() << " GP emulators to " << dir << '\n';
    } else if (*emu) {
        const auto bundle = load_bundle(or_default(bundle_dir, paths.models() / ("bundle_" + tag)));
        const auto q = load_plumeset(or_default(queries, paths.data() / "removed.plumeset"));
        PlumeSet means{bundle.output_grid, {}}, errs{bundle.output_grid, {}};
        for (std::size_t i = 0; i < q.size(); ++i) {
            auto em = emulate(bundle, q.plumes[i].origin, q.plumes[i].time, cfg.n_samples,
                              cfg.seed ^ (0x9e3779b97f4a7c15ULL * (i + 1)));
            means.plumes.push_back(std::move(em.mean));
            errs.plumes.push_back(std::move(em.stderr_plume));
        }
        const auto path = or_default(output, paths.data() / ("emulated_" + tag + ".plumeset"));
        save_plumeset(path, means);
        save_plumeset((paths.data() / ("stderr_" + tag + ".plumeset")).string(), errs);
        std::cout << "emulated " << q.size() << " plumes into " << path << '\n';
    } else if (*evl) {
        const auto truth_set = load_plumeset(or_default(truth, paths.data() / "removed.plumeset"));
        auto optional_set = [](const std::string& given, const fs::path& fallback) -> std::optional<PlumeSet> {
            if (!given.empty()) return load_plumeset(given);
            if (fs::exists(fallback)) return load_plumeset(fallback.string());
            return std::nullopt;
        };
        const auto e = optional_set(eof_path, paths.data() / "emulated_eof.plumeset");
        const auto c = optional_set(cvae_path, paths.data() / "emulated_cvae.plumeset");
        if (!e && !c) throw ConfigError("evaluate: no emulations found");
        std::vector<std::size_t> idx(truth_set.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        const auto table = evaluate(truth_set, idx, e ? &*e : nullptr, c ? &*c : nullptr);
        const auto path = or_default(output, paths.root / "metrics.csv");
        save_metrics(path, table);
        if (e) std::cout << "sumMSE eof " << table.sum_mse_eof() << '\n';
        if (c) std::cout << "sumMSE cvae " << table.sum_mse_cvae() << '\n';
        if (const auto k = optional_set(kept_path, paths.data() / "kept.plumeset"))
            std::cout << "sumMSE nearest-copy baseline " << sum_mse(truth_set, nearest_copy_baseline(*k, truth_set))
                      << '\n';
        std::cout << "wrote " << path << '\n';
    } else if (*plt) {
        const auto set = load_plumeset(input);
        const std::size_t i = index.value_or(0);
        if (i >= set.size()) throw ConfigError("plot: index " + std::to_string(i) + " out of range");
        const auto prefix =
            or_default(output, paths.plots() / (fs::path(input).stem().string() + "_" + std::to_string(i)));
        plot(set.plumes[i], prefix);
        std::cout << "wrote " << prefix << ".pgm and " << prefix << ".csv\n";
    } else if (*run) {
        const auto res = run_experiment(cfg, shared.out_dir);
        std::cout << "baseline sumMSE " << res.sum_mse_baseline << '\n';
        if (res.sum_mse_eof) std::cout << "eof sumMSE " << *res.sum_mse_eof << '\n';
        if (res.sum_mse_cvae) std::cout << "cvae sumMSE " << *res.sum_mse_cvae << '\n';
        std::cout << "seconds " << res.seconds << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_cli(argc, argv);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const DimensionError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
