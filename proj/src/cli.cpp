#include "mfals/cli.hpp"

#include <omp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mfals/als.hpp"
#include "mfals/error.hpp"
#include "mfals/implicit.hpp"
#include "mfals/manifest.hpp"
#include "mfals/model.hpp"
#include "mfals/seed.hpp"
#include "mfals/sgd.hpp"

#ifndef MFALS_VERSION
#define MFALS_VERSION "unknown"
#endif

namespace mfals::cli {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Option structs. Every field is serialized into the run manifest.

struct DataOptions {
    std::string delimiter = "tab";
    bool one_based = false;
    std::size_t m = 0;  // 0: infer from the files
    std::size_t n = 0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DataOptions, delimiter, one_based, m, n)

struct SynthOptions {
    std::size_t m = 2000;
    std::size_t n = 1000;
    std::size_t f = 16;
    double density = 0.05;
    double noise = 0.1;
    double test_fraction = 0.1;
    std::uint64_t seed = 7;
    std::string out;
    std::string manifest_out;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SynthOptions, m, n, f, density, noise,
                                                test_fraction, seed, out, manifest_out)

struct TrainOptions {
    std::string engine = "als";
    std::string solver = "cg";
    std::size_t cg_iters = 6;
    double cg_tol = 1e-4;
    bool half = false;
    std::size_t factors = 100;
    double lambda = 0.05;
    std::string regularization = "weighted";
    double alpha = 40.0;
    std::size_t epochs = 10;
    double target_rmse = 0.0;  // 0: disabled
    double init_scale = 0.1;
    double lr = 0.01;
    double decay = 0.0;
    std::string sgd_mode = "serial";
    int threads = 0;
    std::uint64_t seed = 1;
    std::string train;
    std::string test;
    std::string model_out;
    std::string report_out;
    std::string manifest_out;
    DataOptions data;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainOptions, engine, solver, cg_iters, cg_tol,
                                                half, factors, lambda, regularization, alpha,
                                                epochs, target_rmse, init_scale, lr, decay,
                                                sgd_mode, threads, seed, train, test, model_out,
                                                report_out, manifest_out, data)

struct EvalOptions {
    std::string model;
    std::string test;
    std::string train;
    double lambda = 0.05;
    int threads = 0;
    std::string manifest_out;
    DataOptions data;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(EvalOptions, model, test, train, lambda, threads,
                                                manifest_out, data)

struct BenchOptions {
    std::string train;
    std::string test;
    std::string engines = "als,sgd";
    std::string solvers = "exact,cg-fp32,cg-fp16";
    std::size_t factors = 100;
    std::size_t epochs = 10;
    std::size_t cg_iters = 6;
    double cg_tol = 1e-4;
    double lambda = 0.05;
    double alpha = 40.0;
    double init_scale = 0.1;
    std::vector<double> sgd_lrs{0.05, 0.1, 0.2, 0.3, 0.4};
    double sgd_decay = 0.0;
    std::size_t sgd_epochs = 0;  // 0: 3 * epochs
    double threshold = 0.0;      // 0: 1.05 * best test RMSE of any run
    int threads = 0;
    std::uint64_t seed = 1;
    std::string out = "bench.jsonl";
    std::string manifest_out;
    DataOptions data;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BenchOptions, train, test, engines, solvers,
                                                factors, epochs, cg_iters, cg_tol, lambda, alpha,
                                                init_scale, sgd_lrs, sgd_decay, sgd_epochs,
                                                threshold, threads, seed, out, manifest_out, data)

struct RerunOptions {
    std::string manifest;
    std::string model_out;
    std::string report_out;
    std::string out;
    std::string manifest_out;
};

// ---------------------------------------------------------------------------
// Shared helpers.

int resolve_threads(int flag) {
    int threads = flag;
    if (threads <= 0) {
        if (const char* env = std::getenv("MFALS_THREADS"); env != nullptr && *env != '\0') {
            char* end = nullptr;
            const long v = std::strtol(env, &end, 10);
            if (*end != '\0' || v < 1 || v > 4096) {
                throw ConfigError(std::string("MFALS_THREADS must be a positive integer, got '") +
                                  env + "'");
            }
            threads = static_cast<int>(v);
        } else {
            threads = omp_get_max_threads();
        }
    }
    omp_set_num_threads(threads);
    return threads;
}

Delimiter parse_delimiter(const std::string& s) {
    if (s == "tab") {
        return Delimiter::tab;
    }
    if (s == "comma") {
        return Delimiter::comma;
    }
    throw ConfigError("--delimiter must be 'tab' or 'comma', got '" + s + "'");
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct LoadedRatings {
    std::string path;
    std::vector<RatingTriple> triples;
    std::size_t m = 0;
    std::size_t n = 0;

    bool empty() const { return path.empty(); }
};

// Binary caches are recognised by the .cmfr suffix; anything else is COO text.
LoadedRatings load_ratings(const std::string& path, const DataOptions& d) {
    LoadedRatings out;
    out.path = path;
    if (ends_with(path, ".cmfr")) {
        const SparseRatings r = load_ratings_cache(path);
        out.triples = r.triples();
        out.m = r.rows();
        out.n = r.cols();
        return out;
    }
    CooOptions opts;
    opts.delimiter = parse_delimiter(d.delimiter);
    opts.one_based = d.one_based;
    if (d.m != 0 || d.n != 0) {
        if (d.m == 0 || d.n == 0) {
            throw ConfigError("--m and --n must be given together");
        }
        opts.dims = std::make_pair(d.m, d.n);
    }
    try {
        CooData c = read_coo_file(path, opts);
        out.triples = std::move(c.triples);
        out.m = c.m;
        out.n = c.n;
    } catch (const ParseError& e) {
        throw DataError(path + ": " + e.what());
    }
    return out;
}

DatasetFingerprint fingerprint(const std::string& role, const LoadedRatings& r) {
    DatasetFingerprint fp = fingerprint_file(role, r.path);
    fp.nnz = r.triples.size();
    fp.rows = r.m;
    fp.cols = r.n;
    return fp;
}

std::string default_manifest(const std::string& explicit_path,
                             std::initializer_list<const std::string*> outputs) {
    if (!explicit_path.empty()) {
        return explicit_path;
    }
    for (const std::string* o : outputs) {
        if (!o->empty()) {
            return *o + ".manifest.json";
        }
    }
    return {};
}

RunManifest make_manifest(const std::string& command, json config, std::uint64_t seed) {
    RunManifest m;
    m.tool_version = MFALS_VERSION;
    m.command = command;
    m.config = std::move(config);
    m.seed = seed;
    return m;
}

SolverConfig solver_config(const std::string& solver, std::size_t cg_iters, double cg_tol,
                           bool half) {
    SolverConfig s;
    if (solver == "exact") {
        s.method = SolverMethod::exact;
    } else if (solver == "cg") {
        s.method = SolverMethod::cg;
    } else {
        throw ConfigError("--solver must be 'exact' or 'cg', got '" + solver + "'");
    }
    if (half && s.method == SolverMethod::exact) {
        throw ConfigError(
            "--half stores the Gram matrices in binary16, which only the CG solver reads; "
            "use --solver cg with --half");
    }
    s.cg_iters = cg_iters;
    s.cg_tol = static_cast<float>(cg_tol);
    s.precision = half ? Precision::fp16 : Precision::fp32;
    s.validate();
    return s;
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

void print_epochs(std::ostream& out, const TrainReport& report) {
    for (const EpochRecord& e : report.epochs) {
        out << "epoch " << std::setw(3) << e.epoch << "  objective " << std::setw(12)
            << fmt(e.objective, 8) << "  train_rmse " << std::setw(10) << fmt(e.train_rmse, 6);
        if (e.test_rmse) {
            out << "  test_rmse " << std::setw(10) << fmt(*e.test_rmse, 6);
        }
        if (e.mean_percentile_rank) {
            out << "  mpr " << fmt(*e.mean_percentile_rank, 4);
        }
        out << "  " << fmt(e.wall_seconds, 3) << "s\n";
    }
}

std::optional<std::size_t> epochs_to_threshold(const TrainReport& report, double threshold) {
    for (const EpochRecord& e : report.epochs) {
        if (e.test_rmse && *e.test_rmse <= threshold) {
            return e.epoch;
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Commands.

int cmd_synth(SynthOptions o, std::ostream& out) {
    if (o.out.empty()) {
        throw ConfigError("synth needs --out PREFIX");
    }
    if (!(o.density > 0.0 && o.density <= 1.0)) {
        throw ConfigError("--density must lie in (0, 1]");
    }
    if (!(o.test_fraction >= 0.0 && o.test_fraction < 1.0)) {
        throw ConfigError("--test-fraction must lie in [0, 1)");
    }
    const std::string all_path = o.out + ".tsv";
    const std::string cache_path = o.out + ".cmfr";
    const std::string truth_path = o.out + ".truth.cmfm";
    const std::string train_path = o.out + ".train.tsv";
    const std::string test_path = o.out + ".test.tsv";

    RunManifest manifest = make_manifest("synth", o, o.seed);
    manifest.artifacts = {{"ratings", all_path}, {"cache", cache_path}, {"truth", truth_path}};
    if (o.test_fraction > 0.0) {
        manifest.artifacts["train"] = train_path;
        manifest.artifacts["test"] = test_path;
    }
    const std::string manifest_path = default_manifest(o.manifest_out, {&o.out});
    save_manifest(manifest_path, manifest);

    const SyntheticData data = gen_synthetic(o.m, o.n, o.f, o.density, o.noise, o.seed);
    auto write_text = [](const std::string& path, std::span<const RatingTriple> triples) {
        std::ofstream f(path);
        if (!f) {
            throw DataError("cannot open " + path + " for writing");
        }
        write_coo(f, triples);
        if (!f) {
            throw DataError("write error in " + path);
        }
    };
    write_text(all_path, data.triples);
    save_ratings_cache(cache_path, SparseRatings::build(data.triples, o.m, o.n));
    save_model(truth_path, data.truth.x_true, data.truth.theta_true);
    json summary{{"m", o.m},
                 {"n", o.n},
                 {"nnz", data.triples.size()},
                 {"ratings", all_path},
                 {"sha256", sha256_file(all_path)},
                 {"manifest", manifest_path}};
    if (o.test_fraction > 0.0) {
        const HoldoutSplit split =
            split_holdout(data.triples, o.test_fraction, derive_seed(o.seed, 3));
        write_text(train_path, split.train);
        write_text(test_path, split.test);
        summary["train_nnz"] = split.train.size();
        summary["test_nnz"] = split.test.size();
    }
    out << summary.dump() << '\n';
    return kExitOk;
}

int cmd_train(TrainOptions o, std::ostream& out) {
    o.threads = resolve_threads(o.threads);
    if (o.engine != "als" && o.engine != "implicit" && o.engine != "sgd") {
        throw ConfigError("--engine must be als, implicit or sgd");
    }
    if (o.sgd_mode != "serial" && o.sgd_mode != "hogwild") {
        throw ConfigError("--sgd-mode must be serial or hogwild");
    }
    if (o.regularization != "weighted" && o.regularization != "plain") {
        throw ConfigError("--regularization must be weighted or plain");
    }
    if (o.target_rmse < 0.0) {
        throw ConfigError("--target-rmse must be positive");
    }
    if (o.engine == "sgd" && (o.half || o.solver == "exact")) {
        throw ConfigError("--solver and --half apply to the ALS engines, not sgd");
    }
    const SolverConfig solver = solver_config(o.solver, o.cg_iters, o.cg_tol, o.half);
    if (o.train.empty()) {
        throw ConfigError("train needs --train PATH");
    }

    LoadedRatings train_data = load_ratings(o.train, o.data);
    LoadedRatings test_data;
    if (!o.test.empty()) {
        test_data = load_ratings(o.test, o.data);
    }
    const std::size_t m = std::max(train_data.m, test_data.m);
    const std::size_t n = std::max(train_data.n, test_data.n);

    RunManifest manifest = make_manifest("train", o, o.seed);
    manifest.inputs.push_back(fingerprint("train", train_data));
    if (!test_data.empty()) {
        manifest.inputs.push_back(fingerprint("test", test_data));
    }
    if (!o.model_out.empty()) {
        manifest.artifacts["model"] = o.model_out;
    }
    if (!o.report_out.empty()) {
        manifest.artifacts["report"] = o.report_out;
    }
    const std::string manifest_path =
        default_manifest(o.manifest_out, {&o.model_out, &o.report_out});
    if (!manifest_path.empty()) {
        save_manifest(manifest_path, manifest);
    }

    const SparseRatings ratings = SparseRatings::build(train_data.triples, m, n);
    const std::optional<double> target =
        o.target_rmse > 0.0 ? std::optional<double>(o.target_rmse) : std::nullopt;

    TrainResult result;
    if (o.engine == "als") {
        AlsConfig c;
        c.f = o.factors;
        c.lambda = static_cast<float>(o.lambda);
        c.epochs = o.epochs;
        c.solver = solver;
        c.init_scale = static_cast<float>(o.init_scale);
        c.seed = o.seed;
        c.target_rmse = target;
        c.regularization =
            o.regularization == "plain" ? Regularization::plain : Regularization::weighted;
        c.threads = o.threads;
        result = train(ratings, test_data.triples, c);
    } else if (o.engine == "implicit") {
        ImplicitConfig c;
        c.f = o.factors;
        c.alpha = static_cast<float>(o.alpha);
        c.lambda = static_cast<float>(o.lambda);
        c.epochs = o.epochs;
        c.solver = solver;
        c.init_scale = static_cast<float>(o.init_scale);
        c.seed = o.seed;
        c.threads = o.threads;
        result = implicit_train(ratings, test_data.triples, c);
    } else {
        SgdConfig c;
        c.f = o.factors;
        c.lambda = static_cast<float>(o.lambda);
        c.epochs = o.epochs;
        c.learning_rate = static_cast<float>(o.lr);
        c.decay = static_cast<float>(o.decay);
        c.mode = o.sgd_mode == "hogwild" ? SgdMode::hogwild : SgdMode::serial;
        c.seed = o.seed;
        c.workers = o.threads;
        c.init_scale = static_cast<float>(o.init_scale);
        c.target_rmse = target;
        result = sgd_train(ratings, test_data.triples, c);
    }

    if (!o.model_out.empty()) {
        save_model(o.model_out, result.x, result.theta);
    }
    if (!o.report_out.empty()) {
        save_report(o.report_out, result.report);
    }
    print_epochs(out, result.report);
    out << summary_json(result.report).dump() << '\n';
    return kExitOk;
}

int cmd_eval(EvalOptions o, std::ostream& out) {
    o.threads = resolve_threads(o.threads);
    if (o.model.empty() || o.test.empty()) {
        throw ConfigError("eval needs --model and --test");
    }
    const LoadedRatings test_data = load_ratings(o.test, o.data);
    LoadedRatings train_data;
    if (!o.train.empty()) {
        train_data = load_ratings(o.train, o.data);
    }
    if (!o.manifest_out.empty()) {
        RunManifest manifest = make_manifest("eval", o, 0);
        manifest.inputs.push_back(fingerprint_file("model", o.model));
        manifest.inputs.push_back(fingerprint("test", test_data));
        if (!train_data.empty()) {
            manifest.inputs.push_back(fingerprint("train", train_data));
        }
        save_manifest(o.manifest_out, manifest);
    }

    const Model model = load_model(o.model);
    const auto check_shape = [&](const LoadedRatings& r) {
        if (r.m > model.x.rows() || r.n > model.theta.rows()) {
            throw BoundsError(r.path + " has shape " + std::to_string(r.m) + " x " +
                              std::to_string(r.n) + " but the model covers " +
                              std::to_string(model.x.rows()) + " x " +
                              std::to_string(model.theta.rows()));
        }
    };
    check_shape(test_data);
    json result{{"rmse", rmse(model.x, model.theta, test_data.triples)},
                {"test_ratings", test_data.triples.size()},
                {"f", model.f()}};
    if (!train_data.empty()) {
        check_shape(train_data);
        const SparseRatings ratings =
            SparseRatings::build(train_data.triples, model.x.rows(), model.theta.rows());
        // Training stores lambda as float; match it so the objective agrees with reports.
        result["objective"] =
            objective(model.x, model.theta, ratings, static_cast<float>(o.lambda));
        result["train_rmse"] = rmse(model.x, model.theta, ratings);
    }
    out << result.dump() << '\n';
    return kExitOk;
}

struct BenchRow {
    std::string config;
    std::string engine;
    TrainReport report;
    std::optional<double> learning_rate;
    bool tuned = false;
};

PhaseTimes summed_phases(const TrainReport& r) {
    PhaseTimes t;
    for (const EpochRecord& e : r.epochs) {
        t += e.phases;
    }
    return t;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

int cmd_bench(BenchOptions o, std::ostream& out) {
    o.threads = resolve_threads(o.threads);
    if (o.train.empty() || o.test.empty()) {
        throw ConfigError("bench needs --train and --test");
    }
    const std::vector<std::string> engines = split_list(o.engines);
    const std::vector<std::string> solvers = split_list(o.solvers);
    for (const std::string& e : engines) {
        if (e != "als" && e != "implicit" && e != "sgd") {
            throw ConfigError("unknown engine '" + e + "' in --engines");
        }
    }
    for (const std::string& s : solvers) {
        if (s != "exact" && s != "cg-fp32" && s != "cg-fp16") {
            throw ConfigError("unknown solver '" + s + "' in --solvers");
        }
    }
    if (o.sgd_lrs.empty()) {
        throw ConfigError("--sgd-lrs needs at least one learning rate");
    }
    const std::size_t sgd_epochs = o.sgd_epochs ? o.sgd_epochs : 3 * o.epochs;

    const LoadedRatings train_data = load_ratings(o.train, o.data);
    const LoadedRatings test_data = load_ratings(o.test, o.data);
    const std::size_t m = std::max(train_data.m, test_data.m);
    const std::size_t n = std::max(train_data.n, test_data.n);

    RunManifest manifest = make_manifest("bench", o, o.seed);
    manifest.inputs.push_back(fingerprint("train", train_data));
    manifest.inputs.push_back(fingerprint("test", test_data));
    manifest.artifacts["bench"] = o.out;
    save_manifest(default_manifest(o.manifest_out, {&o.out}), manifest);

    const SparseRatings ratings = SparseRatings::build(train_data.triples, m, n);

    std::vector<BenchRow> rows;
    for (const std::string& engine : engines) {
        if (engine == "sgd") {
            for (double lr : o.sgd_lrs) {
                SgdConfig c;
                c.f = o.factors;
                c.lambda = static_cast<float>(o.lambda);
                c.epochs = sgd_epochs;
                c.learning_rate = static_cast<float>(lr);
                c.decay = static_cast<float>(o.sgd_decay);
                c.seed = o.seed;
                c.init_scale = static_cast<float>(o.init_scale);
                BenchRow row{"sgd-lr" + fmt(lr, 3), "sgd", {}, lr, false};
                try {
                    row.report = sgd_train(ratings, test_data.triples, c).report;
                } catch (const NumericalError&) {
                    row.report.engine = "sgd";
                    row.report.stop_reason = "diverged";
                }
                rows.push_back(std::move(row));
            }
            continue;
        }
        for (const std::string& s : solvers) {
            const SolverConfig solver =
                solver_config(s == "exact" ? "exact" : "cg", o.cg_iters, o.cg_tol, s == "cg-fp16");
            BenchRow row{engine + "-" + s, engine, {}, std::nullopt, false};
            if (engine == "als") {
                AlsConfig c;
                c.f = o.factors;
                c.lambda = static_cast<float>(o.lambda);
                c.epochs = o.epochs;
                c.solver = solver;
                c.init_scale = static_cast<float>(o.init_scale);
                c.seed = o.seed;
                c.threads = o.threads;
                c.track_half_objective = false;
                row.report = train(ratings, test_data.triples, c).report;
            } else {
                ImplicitConfig c;
                c.f = o.factors;
                c.alpha = static_cast<float>(o.alpha);
                c.lambda = static_cast<float>(o.lambda);
                c.epochs = o.epochs;
                c.solver = solver;
                c.init_scale = static_cast<float>(o.init_scale);
                c.seed = o.seed;
                c.threads = o.threads;
                row.report = implicit_train(ratings, test_data.triples, c).report;
            }
            rows.push_back(std::move(row));
        }
    }

    // Threshold: explicit, or 5% above the best test RMSE any run reached.
    double best = std::numeric_limits<double>::infinity();
    for (const BenchRow& r : rows) {
        for (const EpochRecord& e : r.report.epochs) {
            if (e.test_rmse && r.engine != "implicit") {
                best = std::min(best, *e.test_rmse);
            }
        }
    }
    const double threshold = o.threshold > 0.0 ? o.threshold : 1.05 * best;

    // Tuned SGD: fewest epochs to threshold, then lowest final RMSE.
    BenchRow* tuned = nullptr;
    auto sgd_key = [&](const BenchRow& r) {
        const auto ept = epochs_to_threshold(r.report, threshold);
        const double final_rmse = r.report.epochs.empty() || !r.report.epochs.back().test_rmse
                                      ? std::numeric_limits<double>::infinity()
                                      : *r.report.epochs.back().test_rmse;
        return std::make_pair(ept.value_or(std::numeric_limits<std::size_t>::max()), final_rmse);
    };
    for (BenchRow& r : rows) {
        if (r.engine == "sgd" && (!tuned || sgd_key(r) < sgd_key(*tuned))) {
            tuned = &r;
        }
    }
    if (tuned) {
        tuned->tuned = true;
    }

    std::ofstream file(o.out);
    if (!file) {
        throw DataError("cannot open " + o.out + " for writing");
    }
    const RooflineEstimate roof = roofline_estimate(m, n, std::max<std::size_t>(ratings.nnz(), 1),
                                                    o.factors, o.cg_iters);
    const json roofline{
        {"type", "roofline"},
        {"m", m},
        {"n", n},
        {"nnz", ratings.nnz()},
        {"f", o.factors},
        {"cg_iters", o.cg_iters},
        {"hermitian_flops", roof.update_x.hermitian_flops + roof.update_theta.hermitian_flops},
        {"hermitian_intensity", roof.update_x.hermitian_intensity()},
        {"solve_flops_exact", roof.update_x.solve_flops_exact + roof.update_theta.solve_flops_exact},
        {"solve_flops_cg", roof.update_x.solve_flops_cg + roof.update_theta.solve_flops_cg},
        {"solve_flop_ratio_cg_to_exact",
         roof.update_x.solve_flops_cg / roof.update_x.solve_flops_exact},
        {"als_flops_exact", roof.als_flops(false)},
        {"als_flops_cg", roof.als_flops(true)},
        {"sgd_flops", roof.sgd_flops},
        {"sgd_bytes", roof.sgd_bytes},
        {"sgd_intensity", roof.sgd_intensity()}};
    file << roofline.dump() << '\n';

    for (const BenchRow& r : rows) {
        const PhaseTimes t = summed_phases(r.report);
        json trajectory = json::array();
        for (const EpochRecord& e : r.report.epochs) {
            json p{{"epoch", e.epoch},
                   {"objective", e.objective},
                   {"train_rmse", e.train_rmse},
                   {"wall_seconds", e.wall_seconds}};
            if (e.test_rmse) {
                p["test_rmse"] = *e.test_rmse;
            }
            if (e.mean_percentile_rank) {
                p["mean_percentile_rank"] = *e.mean_percentile_rank;
            }
            trajectory.push_back(p);
        }
        json j{{"type", "bench_row"},
               {"config", r.config},
               {"engine", r.engine},
               {"solver", r.report.solver},
               {"precision", r.report.precision},
               {"phases", to_json(t)},
               {"total_seconds", r.report.total_seconds},
               {"epochs", r.report.epochs_run()},
               {"stop_reason", r.report.stop_reason},
               {"flops_per_epoch", r.report.epochs.empty() ? 0.0 : r.report.epochs[0].flops_estimate},
               {"bytes_per_epoch", r.report.epochs.empty() ? 0.0 : r.report.epochs[0].bytes_estimate},
               {"tuned", r.tuned},
               {"trajectory", trajectory}};
        if (r.learning_rate) {
            j["learning_rate"] = *r.learning_rate;
        }
        if (!r.report.epochs.empty() && r.report.epochs.back().test_rmse) {
            j["final_test_rmse"] = *r.report.epochs.back().test_rmse;
        }
        if (const auto ept = epochs_to_threshold(r.report, threshold)) {
            j["epochs_to_threshold"] = *ept;
        } else {
            j["epochs_to_threshold"] = nullptr;
        }
        file << j.dump() << '\n';
    }

    json summary{{"type", "bench_summary"},
                 {"threshold", threshold},
                 {"threshold_source", o.threshold > 0.0 ? "flag" : "1.05 x best test RMSE"}};
    for (const BenchRow& r : rows) {
        if (r.engine == "als" && r.config == "als-cg-fp32") {
            const auto ept = epochs_to_threshold(r.report, threshold);
            summary["als_epochs_to_threshold"] = ept ? json(*ept) : json(nullptr);
        }
    }
    if (tuned) {
        const auto ept = epochs_to_threshold(tuned->report, threshold);
        summary["sgd_epochs_to_threshold"] = ept ? json(*ept) : json(nullptr);
        summary["sgd_tuned_learning_rate"] = *tuned->learning_rate;
    }
    file << summary.dump() << '\n';
    if (!file) {
        throw DataError("write error in " + o.out);
    }

    // Human-readable table; seconds are summed over all epochs.
    out << std::left << std::setw(18) << "config" << std::right << std::setw(10) << "hermitian"
        << std::setw(9) << "solve" << std::setw(9) << "bias" << std::setw(9) << "sgd"
        << std::setw(9) << "eval" << std::setw(11) << "GFLOP/ep" << std::setw(11) << "final_rmse"
        << std::setw(8) << "ep@thr" << '\n';
    for (const BenchRow& r : rows) {
        const PhaseTimes t = summed_phases(r.report);
        const auto ept = epochs_to_threshold(r.report, threshold);
        const double gflop = r.report.epochs.empty() ? 0.0 : r.report.epochs[0].flops_estimate / 1e9;
        std::string final_rmse = "-";
        if (!r.report.epochs.empty() && r.report.epochs.back().test_rmse) {
            final_rmse = fmt(*r.report.epochs.back().test_rmse, 5);
        } else if (r.report.stop_reason == "diverged") {
            final_rmse = "diverged";
        }
        out << std::left << std::setw(18) << (r.config + (r.tuned ? "*" : "")) << std::right
            << std::fixed << std::setprecision(3) << std::setw(10) << t.hermitian << std::setw(9)
            << t.solve << std::setw(9) << t.bias << std::setw(9) << t.sgd << std::setw(9) << t.eval
            << std::setw(11) << gflop << std::defaultfloat << std::setw(11) << final_rmse
            << std::setw(8) << (ept ? std::to_string(*ept) : std::string("-")) << '\n';
    }
    out << "threshold " << fmt(threshold, 5) << " (" << summary["threshold_source"].get<std::string>()
        << "); * = tuned SGD\n";
    out << "roofline: cg/exact solve flop ratio "
        << fmt(roofline["solve_flop_ratio_cg_to_exact"].get<double>(), 3)
        << ", hermitian intensity " << fmt(roof.update_x.hermitian_intensity(), 3)
        << " flop/word, sgd intensity " << fmt(roof.sgd_intensity(), 3) << " flop/word\n";
    return kExitOk;
}

int dispatch(const std::string& command, const json& config, std::ostream& out) {
    if (command == "synth") {
        return cmd_synth(config.get<SynthOptions>(), out);
    }
    if (command == "train") {
        return cmd_train(config.get<TrainOptions>(), out);
    }
    if (command == "eval") {
        return cmd_eval(config.get<EvalOptions>(), out);
    }
    if (command == "bench") {
        return cmd_bench(config.get<BenchOptions>(), out);
    }
    throw ConfigError("manifest names unknown command '" + command + "'");
}

int cmd_rerun(const RerunOptions& o, std::ostream& out) {
    const RunManifest manifest = load_manifest(o.manifest);
    for (const DatasetFingerprint& in : manifest.inputs) {
        if (!in.sha256.empty() && sha256_file(in.path) != in.sha256) {
            throw DataError("input " + in.path + " changed since the manifest was written");
        }
    }
    json config = manifest.config;
    bool redirected = false;
    const auto override_key = [&](const char* key, const std::string& value) {
        if (!value.empty()) {
            if (!config.contains(key)) {
                throw ConfigError(std::string("--") + key + " does not apply to a " +
                                  manifest.command + " manifest");
            }
            config[key] = value;
            redirected = true;
        }
    };
    override_key("model_out", o.model_out);
    override_key("report_out", o.report_out);
    override_key("out", o.out);
    // Redirected outputs get their manifest next to them, not over the original.
    if (!o.manifest_out.empty()) {
        config["manifest_out"] = o.manifest_out;
    } else if (redirected) {
        config["manifest_out"] = "";
    }
    try {
        return dispatch(manifest.command, config, out);
    } catch (const json::exception& e) {
        throw FormatError(std::string("manifest config is malformed: ") + e.what());
    }
}

void add_data_options(CLI::App* cmd, DataOptions& d) {
    cmd->add_option("--delimiter", d.delimiter, "COO field separator: tab or comma")
        ->capture_default_str();
    cmd->add_flag("--one-based", d.one_based, "COO indices start at 1");
    cmd->add_option("--m", d.m, "Number of rows (default: inferred)");
    cmd->add_option("--n", d.n, "Number of columns (default: inferred)");
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Matrix factorization by alternating least squares with CG and fp16 solvers",
                 "mfals"};
    app.require_subcommand(1);
    app.set_version_flag("--version", MFALS_VERSION);

    SynthOptions synth;
    CLI::App* s = app.add_subcommand("synth", "Generate a synthetic low-rank rating dataset");
    s->add_option("--m", synth.m, "Rows (users)")->capture_default_str();
    s->add_option("--n", synth.n, "Columns (items)")->capture_default_str();
    s->add_option("--f", synth.f, "Rank of the ground truth")->capture_default_str();
    s->add_option("--density", synth.density, "Fraction of observed cells")->capture_default_str();
    s->add_option("--noise", synth.noise, "Gaussian noise sigma")->capture_default_str();
    s->add_option("--test-fraction", synth.test_fraction, "Held-out share (0: no split)")
        ->capture_default_str();
    s->add_option("--seed", synth.seed, "Root seed")->capture_default_str();
    s->add_option("--out", synth.out, "Output prefix")->required();
    s->add_option("--manifest-out", synth.manifest_out, "Manifest path (default PREFIX.manifest.json)");

    TrainOptions tr;
    CLI::App* t = app.add_subcommand("train", "Train a model");
    t->add_option("--engine", tr.engine, "als, implicit or sgd")->capture_default_str();
    t->add_option("--solver", tr.solver, "exact or cg")->capture_default_str();
    t->add_option("--cg-iters", tr.cg_iters, "CG iterations per system (f_s)")->capture_default_str();
    t->add_option("--cg-tol", tr.cg_tol, "CG stop when |r| < tol * |b|")->capture_default_str();
    t->add_flag("--half", tr.half, "Store Gram matrices in binary16 (CG only)");
    t->add_option("--factors", tr.factors, "Latent dimension f")->capture_default_str();
    t->add_option("--lambda", tr.lambda, "Regularization weight")->capture_default_str();
    t->add_option("--regularization", tr.regularization, "weighted (lambda*n_u) or plain")
        ->capture_default_str();
    t->add_option("--alpha", tr.alpha, "Implicit confidence scale")->capture_default_str();
    t->add_option("--epochs", tr.epochs, "Epochs")->capture_default_str();
    t->add_option("--target-rmse", tr.target_rmse, "Stop once test RMSE reaches this value");
    t->add_option("--init-scale", tr.init_scale, "Uniform init half-width")->capture_default_str();
    t->add_option("--lr", tr.lr, "SGD initial learning rate")->capture_default_str();
    t->add_option("--decay", tr.decay, "SGD rate decay: lr / (1 + decay * k)")->capture_default_str();
    t->add_option("--sgd-mode", tr.sgd_mode, "serial or hogwild")->capture_default_str();
    t->add_option("--threads", tr.threads, "Worker threads (default: MFALS_THREADS or all cores)");
    t->add_option("--seed", tr.seed, "Root seed")->capture_default_str();
    t->add_option("--train", tr.train, "Training ratings (COO text or .cmfr)")->required();
    t->add_option("--test", tr.test, "Held-out ratings");
    t->add_option("--model-out", tr.model_out, "Model file to write");
    t->add_option("--report-out", tr.report_out, "Report (JSON lines) to write");
    t->add_option("--manifest-out", tr.manifest_out, "Manifest path (default MODEL.manifest.json)");
    add_data_options(t, tr.data);

    EvalOptions ev;
    CLI::App* e = app.add_subcommand("eval", "Evaluate a model on held-out ratings");
    e->add_option("--model", ev.model, "Model file")->required();
    e->add_option("--test", ev.test, "Ratings to score")->required();
    e->add_option("--train", ev.train, "Training ratings; adds the objective");
    e->add_option("--lambda", ev.lambda, "Lambda for the objective")->capture_default_str();
    e->add_option("--threads", ev.threads, "Worker threads");
    e->add_option("--manifest-out", ev.manifest_out, "Manifest path (none by default)");
    add_data_options(e, ev.data);

    BenchOptions be;
    CLI::App* b = app.add_subcommand("bench", "Compare solvers and engines on one dataset");
    b->add_option("--train", be.train, "Training ratings")->required();
    b->add_option("--test", be.test, "Held-out ratings")->required();
    b->add_option("--engines", be.engines, "Comma list of als, implicit, sgd")->capture_default_str();
    b->add_option("--solvers", be.solvers, "Comma list of exact, cg-fp32, cg-fp16")
        ->capture_default_str();
    b->add_option("--factors", be.factors, "Latent dimension f")->capture_default_str();
    b->add_option("--epochs", be.epochs, "ALS epochs")->capture_default_str();
    b->add_option("--cg-iters", be.cg_iters, "CG iterations per system")->capture_default_str();
    b->add_option("--cg-tol", be.cg_tol, "CG relative tolerance")->capture_default_str();
    b->add_option("--lambda", be.lambda, "Regularization weight")->capture_default_str();
    b->add_option("--alpha", be.alpha, "Implicit confidence scale")->capture_default_str();
    b->add_option("--init-scale", be.init_scale, "Uniform init half-width")->capture_default_str();
    b->add_option("--sgd-lrs", be.sgd_lrs, "SGD learning rates to try")->delimiter(',');
    b->add_option("--sgd-decay", be.sgd_decay, "SGD rate decay")->capture_default_str();
    b->add_option("--sgd-epochs", be.sgd_epochs, "SGD epochs (default 3x --epochs)");
    b->add_option("--threshold", be.threshold, "RMSE for epochs-to-threshold (default auto)");
    b->add_option("--threads", be.threads, "Worker threads");
    b->add_option("--seed", be.seed, "Root seed")->capture_default_str();
    b->add_option("--out", be.out, "JSON-lines output")->capture_default_str();
    b->add_option("--manifest-out", be.manifest_out, "Manifest path (default OUT.manifest.json)");
    add_data_options(b, be.data);

    RerunOptions re;
    CLI::App* r = app.add_subcommand("rerun", "Replay a run from its manifest");
    r->add_option("--manifest", re.manifest, "Manifest written by an earlier run")->required();
    r->add_option("--model-out", re.model_out, "Redirect the model output");
    r->add_option("--report-out", re.report_out, "Redirect the report output");
    r->add_option("--out", re.out, "Redirect the synth prefix or bench output");
    r->add_option("--manifest-out", re.manifest_out, "Manifest path for the replay");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& ex) {
        const int code = app.exit(ex, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (s->parsed()) {
            return cmd_synth(synth, out);
        }
        if (t->parsed()) {
            return cmd_train(tr, out);
        }
        if (e->parsed()) {
            return cmd_eval(ev, out);
        }
        if (b->parsed()) {
            return cmd_bench(be, out);
        }
        return cmd_rerun(re, out);
    } catch (const ConfigError& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const DataError& ex) {
        err << "data error: " << ex.what() << '\n';
        return kExitData;
    } catch (const NumericalError& ex) {
        err << "numerical error: " << ex.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << '\n';
        return kExitData;
    }
}

}  // namespace mfals::cli
