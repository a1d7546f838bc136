#include "mfals/als.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "mfals/error.hpp"
#include "mfals/seed.hpp"

namespace mfals {

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

double predict(const FactorMatrix& x, const FactorMatrix& theta, std::size_t u, std::size_t v) {
    const float* a = x.row(u).data();
    const float* b = theta.row(v).data();
    double s = 0.0;
    for (std::size_t k = 0; k < x.f(); ++k) {
        s += static_cast<double>(a[k]) * static_cast<double>(b[k]);
    }
    return s;
}

double squared_norm(std::span<const float> v) {
    double s = 0.0;
    for (float e : v) {
        s += static_cast<double>(e) * static_cast<double>(e);
    }
    return s;
}

std::size_t count_empty(const CompressedView& view) {
    std::size_t empty = 0;
    for (std::size_t i = 0; i < view.outer_size(); ++i) {
        empty += view.count(i) == 0 ? 1 : 0;
    }
    return empty;
}

struct ChunkFailure {
    std::size_t row = 0;
    std::string what;
};

}  // namespace

void AlsConfig::validate() const {
    if (f < 1) {
        throw ConfigError("f must be at least 1");
    }
    if (!(lambda >= 0.0f)) {
        throw ConfigError("lambda must be non-negative");
    }
    if (epochs < 1) {
        throw ConfigError("epochs must be at least 1");
    }
    if (!(init_scale > 0.0f)) {
        throw ConfigError("init_scale must be positive");
    }
    if (threads < 1) {
        throw ConfigError("threads must be at least 1");
    }
    solver.validate();
    tile.validate(f);
}

const char* to_string(SolverMethod method) {
    return method == SolverMethod::exact ? "exact" : "cg";
}

const char* to_string(Precision precision) {
    return precision == Precision::fp16 ? "fp16" : "fp32";
}

SideStats update_side(const CompressedView& view, const FactorMatrix& fixed, FactorMatrix& target,
                      float lambda, const SolverConfig& solver, const UpdateOptions& options) {
    solver.validate();
    const std::size_t f = fixed.f();
    const std::size_t rows = view.outer_size();
    if (target.f() != f) {
        throw ConfigError("target and fixed factor dimensions differ");
    }
    if (target.rows() != rows) {
        throw ConfigError("target has " + std::to_string(target.rows()) + " rows, ratings have " +
                          std::to_string(rows));
    }
    if (!view.inner.empty() &&
        *std::max_element(view.inner.begin(), view.inner.end()) >= fixed.rows()) {
        throw ConfigError("ratings reference a row beyond the fixed factor matrix");
    }
    if (!(lambda >= 0.0f)) {
        throw ConfigError("lambda must be non-negative");
    }
    if (options.threads < 1 || options.chunk < 1) {
        throw ConfigError("threads and chunk must be at least 1");
    }
    options.tile.validate(f);

    const auto wall0 = clock_type::now();
    const std::size_t chunk = options.chunk;
    const auto chunks = static_cast<std::ptrdiff_t>((rows + chunk - 1) / chunk);

    SideStats total;
    std::vector<ChunkFailure> failures;

#pragma omp parallel num_threads(options.threads)
    {
        GramAssembler assembler(f, options.tile);
        std::vector<GramSystem> systems(chunk);
        SideStats local;
        HermitianTimes htimes;
        std::vector<ChunkFailure> local_failures;

#pragma omp for schedule(dynamic, 1)
        for (std::ptrdiff_t c = 0; c < chunks; ++c) {
            const std::size_t r0 = static_cast<std::size_t>(c) * chunk;
            const std::size_t r1 = std::min(rows, r0 + chunk);

            auto t0 = clock_type::now();
            for (std::size_t r = r0; r < r1; ++r) {
                GramSystem& sys = systems[r - r0];
                sys.reset(f, r);
                const auto cols = view.inner_of(r);
                const float shift = options.regularization == Regularization::weighted
                                        ? lambda * static_cast<float>(cols.size())
                                        : lambda;
                assembler.assemble(cols, {}, fixed, {}, shift, solver.precision, sys, &htimes);
            }
            local.times.hermitian += seconds_since(t0);

            t0 = clock_type::now();
            for (std::size_t r = r0; r < r1; ++r) {
                get_bias(view, r, fixed, systems[r - r0].b());
            }
            local.times.bias += seconds_since(t0);

            t0 = clock_type::now();
            for (std::size_t r = r0; r < r1; ++r) {
                const GramSystem& sys = systems[r - r0];
                if (sys.empty()) {
                    ++local.rows_skipped;
                    continue;
                }
                try {
                    // Cholesky fails before writing x, so a failed row keeps its vector.
                    const CgResult res = solve_system(sys, target.row(r), solver);
                    local.cg_iterations += res.iterations;
                    local.breakdowns += res.breakdown ? 1 : 0;
                    ++local.rows_solved;
                } catch (const std::exception& e) {
                    local_failures.push_back({r, e.what()});
                }
            }
            local.times.solve += seconds_since(t0);
        }

#pragma omp critical(mfals_update_side_merge)
        {
            total.times += local.times;
            total.times.hermitian_stage += htimes.stage;
            total.times.hermitian_accumulate += htimes.accumulate;
            total.times.hermitian_store += htimes.store;
            total.rows_solved += local.rows_solved;
            total.rows_skipped += local.rows_skipped;
            total.cg_iterations += local.cg_iterations;
            total.breakdowns += local.breakdowns;
            failures.insert(failures.end(), local_failures.begin(), local_failures.end());
        }
    }

    if (!failures.empty()) {
        const auto first = std::min_element(
            failures.begin(), failures.end(),
            [](const ChunkFailure& a, const ChunkFailure& b) { return a.row < b.row; });
        std::string what = first->what;
        if (failures.size() > 1) {
            what += " (" + std::to_string(failures.size()) + " rows failed)";
        }
        throw SingularSystemError(first->row, what);
    }
    total.wall_seconds = seconds_since(wall0);
    return total;
}

double objective(const FactorMatrix& x, const FactorMatrix& theta, const SparseRatings& train,
                 double lambda) {
    if (x.rows() != train.rows() || theta.rows() != train.cols() || x.f() != theta.f()) {
        throw ConfigError("objective: factor and rating dimensions are inconsistent");
    }
    const CompressedView rows = train.by_row();
    const CompressedView cols = train.by_col();
    const auto m = static_cast<std::ptrdiff_t>(train.rows());

    // Per-row partials summed in row order keep the result thread-independent.
    std::vector<double> partial(train.rows());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ui = 0; ui < m; ++ui) {
        const auto u = static_cast<std::size_t>(ui);
        const auto items = rows.inner_of(u);
        const auto vals = rows.values_of(u);
        double s = 0.0;
        for (std::size_t k = 0; k < items.size(); ++k) {
            const double e = static_cast<double>(vals[k]) - predict(x, theta, u, items[k]);
            s += e * e;
        }
        s += lambda * static_cast<double>(items.size()) * squared_norm(x.row(u));
        partial[u] = s;
    }
    double total = 0.0;
    for (double p : partial) {
        total += p;
    }
    for (std::size_t v = 0; v < train.cols(); ++v) {
        const std::size_t nv = cols.count(v);
        if (nv != 0) {
            total += lambda * static_cast<double>(nv) * squared_norm(theta.row(v));
        }
    }
    return total;
}

double rmse(const FactorMatrix& x, const FactorMatrix& theta, std::span<const RatingTriple> test) {
    if (test.empty()) {
        throw ConfigError("rmse needs a non-empty rating set");
    }
    if (x.f() != theta.f()) {
        throw ConfigError("rmse: factor dimensions differ");
    }
    double s = 0.0;
    for (const RatingTriple& t : test) {
        if (t.user >= x.rows() || t.item >= theta.rows()) {
            throw BoundsError("rating (" + std::to_string(t.user) + ", " +
                              std::to_string(t.item) + ") is outside the model's " +
                              std::to_string(x.rows()) + " x " + std::to_string(theta.rows()) +
                              " shape");
        }
        const double e = static_cast<double>(t.rating) - predict(x, theta, t.user, t.item);
        s += e * e;
    }
    return std::sqrt(s / static_cast<double>(test.size()));
}

double rmse(const FactorMatrix& x, const FactorMatrix& theta, const SparseRatings& ratings) {
    if (ratings.nnz() == 0) {
        throw ConfigError("rmse needs a non-empty rating set");
    }
    const CompressedView rows = ratings.by_row();
    double s = 0.0;
    for (std::size_t u = 0; u < ratings.rows(); ++u) {
        const auto items = rows.inner_of(u);
        const auto vals = rows.values_of(u);
        for (std::size_t k = 0; k < items.size(); ++k) {
            const double e = static_cast<double>(vals[k]) - predict(x, theta, u, items[k]);
            s += e * e;
        }
    }
    return std::sqrt(s / static_cast<double>(ratings.nnz()));
}

std::pair<double, double> als_epoch_cost(std::size_t m, std::size_t n, std::size_t nnz,
                                         std::size_t f, const SolverConfig& solver) {
    const bool cg = solver.method == SolverMethod::cg;
    double flops = 0.0;
    double bytes = 0.0;
    for (const HalfUpdateCost& c : {half_update_cost(m, nnz, f, solver.cg_iters, solver.precision),
                                    half_update_cost(n, nnz, f, solver.cg_iters, solver.precision)}) {
        flops += c.hermitian_flops + c.bias_flops + (cg ? c.solve_flops_cg : c.solve_flops_exact);
        bytes += c.hermitian_bytes + (cg ? c.solve_bytes_cg : c.solve_bytes_exact);
    }
    return {flops, bytes};
}

TrainResult train(const SparseRatings& train, std::span<const RatingTriple> test,
                  const AlsConfig& cfg) {
    cfg.validate();
    const auto run0 = clock_type::now();
    TrainResult out{init_factors(train.rows(), cfg.f, cfg.init_scale, derive_seed(cfg.seed, kSeedX)),
                    init_factors(train.cols(), cfg.f, cfg.init_scale,
                                 derive_seed(cfg.seed, kSeedTheta)),
                    {}};
    TrainReport& report = out.report;
    report.engine = "als";
    report.solver = to_string(cfg.solver.method);
    report.precision = to_string(cfg.solver.precision);
    report.f = cfg.f;
    report.empty_rows = count_empty(train.by_row());
    report.empty_cols = count_empty(train.by_col());
    if (cfg.track_half_objective) {
        report.initial_objective = objective(out.x, out.theta, train, cfg.lambda);
    }

    const UpdateOptions options{cfg.tile, cfg.regularization, cfg.threads, 64};
    const auto [flops, bytes] =
        als_epoch_cost(train.rows(), train.cols(), train.nnz(), cfg.f, cfg.solver);

    report.stop_reason = "epochs";
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto epoch0 = clock_type::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.flops_estimate = flops;
        rec.bytes_estimate = bytes;

        const SideStats sx =
            update_side(train.by_row(), out.theta, out.x, cfg.lambda, cfg.solver, options);
        rec.phases += sx.times;
        if (cfg.track_half_objective) {
            const auto t0 = clock_type::now();
            rec.objective_after_x = objective(out.x, out.theta, train, cfg.lambda);
            rec.phases.eval += seconds_since(t0);
        }
        const SideStats st =
            update_side(train.by_col(), out.x, out.theta, cfg.lambda, cfg.solver, options);
        rec.phases += st.times;
        rec.cg_iterations = sx.cg_iterations + st.cg_iterations;
        rec.cg_breakdowns = sx.breakdowns + st.breakdowns;

        const auto t0 = clock_type::now();
        rec.objective = objective(out.x, out.theta, train, cfg.lambda);
        rec.train_rmse = train.nnz() ? rmse(out.x, out.theta, train) : 0.0;
        if (!test.empty()) {
            rec.test_rmse = rmse(out.x, out.theta, test);
        }
        rec.phases.eval += seconds_since(t0);
        rec.wall_seconds = seconds_since(epoch0);
        report.epochs.push_back(rec);

        if (cfg.target_rmse && rec.test_rmse && *rec.test_rmse <= *cfg.target_rmse) {
            report.stop_reason = "target_rmse";
            break;
        }
    }
    report.total_seconds = seconds_since(run0);
    return out;
}

}  // namespace mfals
