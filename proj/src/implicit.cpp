#include "mfals/implicit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
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

// Dense f x f Gram in double, row-major.
std::vector<double> gram_double(const FactorMatrix& m) {
    const std::size_t f = m.f();
    std::vector<double> g(f * f, 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const float* v = m.row(r).data();
        for (std::size_t i = 0; i < f; ++i) {
            const double vi = v[i];
            for (std::size_t j = 0; j <= i; ++j) {
                g[i * f + j] += vi * static_cast<double>(v[j]);
            }
        }
    }
    for (std::size_t i = 0; i < f; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            g[j * f + i] = g[i * f + j];
        }
    }
    return g;
}

}  // namespace

void ImplicitConfig::validate() const {
    if (f < 1) {
        throw ConfigError("f must be at least 1");
    }
    if (!(alpha > 0.0f)) {
        throw ConfigError("alpha must be positive");
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

std::vector<float> precompute_gram(const FactorMatrix& f, TileConfig cfg) {
    if (!f.all_finite()) {
        throw NumericalError("precompute_gram: factor matrix has non-finite entries");
    }
    std::vector<index_t> all(f.rows());
    std::iota(all.begin(), all.end(), index_t{0});
    GramAssembler assembler(f.f(), cfg);
    GramSystem sys;
    sys.reset(f.f(), 0);
    assembler.assemble(all, {}, f, {}, 0.0f, Precision::fp32, sys);
    return {sys.lower().begin(), sys.lower().end()};
}

void check_implicit_ratings(const SparseRatings& ratings) {
    const auto vals = ratings.by_row().values;
    const auto it = std::find_if(vals.begin(), vals.end(), [](float r) { return r < 0.0f; });
    if (it != vals.end()) {
        throw DataError("implicit feedback needs non-negative ratings; found " +
                        std::to_string(*it));
    }
}

SideStats implicit_update_side(const CompressedView& view, const FactorMatrix& fixed,
                               std::span<const float> gram, FactorMatrix& target, float alpha,
                               float lambda, const SolverConfig& solver,
                               const UpdateOptions& options) {
    solver.validate();
    const std::size_t f = fixed.f();
    const std::size_t rows = view.outer_size();
    if (target.f() != f || target.rows() != rows) {
        throw ConfigError("implicit_update_side: target shape does not match the ratings");
    }
    if (gram.size() != packed_size(f)) {
        throw ConfigError("implicit_update_side: Gram matrix has the wrong size");
    }
    if (!(alpha > 0.0f) || !(lambda >= 0.0f)) {
        throw ConfigError("implicit_update_side: need alpha > 0 and lambda >= 0");
    }
    if (options.threads < 1 || options.chunk < 1) {
        throw ConfigError("threads and chunk must be at least 1");
    }
    options.tile.validate(f);

    const auto wall0 = clock_type::now();
    const std::size_t chunk = options.chunk;
    const auto chunks = static_cast<std::ptrdiff_t>((rows + chunk - 1) / chunk);
    SideStats total;
    std::vector<std::pair<std::size_t, std::string>> failures;

#pragma omp parallel num_threads(options.threads)
    {
        GramAssembler assembler(f, options.tile);
        std::vector<GramSystem> systems(chunk);
        std::vector<index_t> cols;
        std::vector<float> weights;
        SideStats local;
        HermitianTimes htimes;
        std::vector<std::pair<std::size_t, std::string>> local_failures;

#pragma omp for schedule(dynamic, 1)
        for (std::ptrdiff_t c = 0; c < chunks; ++c) {
            const std::size_t r0 = static_cast<std::size_t>(c) * chunk;
            const std::size_t r1 = std::min(rows, r0 + chunk);

            auto t0 = clock_type::now();
            for (std::size_t r = r0; r < r1; ++r) {
                cols.clear();
                weights.clear();
                const auto inner = view.inner_of(r);
                const auto vals = view.values_of(r);
                for (std::size_t k = 0; k < inner.size(); ++k) {
                    if (vals[k] > 0.0f) {
                        cols.push_back(inner[k]);
                        weights.push_back(alpha * vals[k]);
                    }
                }
                GramSystem& sys = systems[r - r0];
                sys.reset(f, r);
                assembler.assemble(cols, weights, fixed, gram, lambda, solver.precision, sys,
                                   &htimes);
            }
            local.times.hermitian += seconds_since(t0);

            t0 = clock_type::now();
            for (std::size_t r = r0; r < r1; ++r) {
                std::span<float> b = systems[r - r0].b();
                std::fill(b.begin(), b.end(), 0.0f);
                const auto inner = view.inner_of(r);
                const auto vals = view.values_of(r);
                for (std::size_t k = 0; k < inner.size(); ++k) {
                    if (!(vals[k] > 0.0f)) {
                        continue;
                    }
                    const float c_uv = 1.0f + alpha * vals[k];
                    const float* t = fixed.row(inner[k]).data();
#pragma omp simd
                    for (std::size_t d = 0; d < f; ++d) {
                        b[d] += c_uv * t[d];
                    }
                }
            }
            local.times.bias += seconds_since(t0);

            t0 = clock_type::now();
            for (std::size_t r = r0; r < r1; ++r) {
                try {
                    const CgResult res = solve_system(systems[r - r0], target.row(r), solver);
                    local.cg_iterations += res.iterations;
                    local.breakdowns += res.breakdown ? 1 : 0;
                    ++local.rows_solved;
                } catch (const std::exception& e) {
                    local_failures.emplace_back(r, e.what());
                }
            }
            local.times.solve += seconds_since(t0);
        }

#pragma omp critical(mfals_implicit_merge)
        {
            total.times += local.times;
            total.times.hermitian_stage += htimes.stage;
            total.times.hermitian_accumulate += htimes.accumulate;
            total.times.hermitian_store += htimes.store;
            total.rows_solved += local.rows_solved;
            total.cg_iterations += local.cg_iterations;
            total.breakdowns += local.breakdowns;
            failures.insert(failures.end(), local_failures.begin(), local_failures.end());
        }
    }

    if (!failures.empty()) {
        const auto first = std::min_element(failures.begin(), failures.end());
        throw SingularSystemError(first->first, first->second);
    }
    total.wall_seconds = seconds_since(wall0);
    return total;
}

double implicit_objective(const FactorMatrix& x, const FactorMatrix& theta,
                          const SparseRatings& train, double alpha, double lambda) {
    if (x.rows() != train.rows() || theta.rows() != train.cols() || x.f() != theta.f()) {
        throw ConfigError("implicit_objective: factor and rating dimensions are inconsistent");
    }
    const std::size_t f = x.f();
    // Sum of all squared predictions: trace(X^T X Theta^T Theta).
    const std::vector<double> gx = gram_double(x);
    const std::vector<double> gt = gram_double(theta);
    double total = 0.0;
    for (std::size_t i = 0; i < f * f; ++i) {
        total += gx[i] * gt[i];
    }
    // Positive cells replace their pred^2 term by c (1 - pred)^2.
    const CompressedView rows = train.by_row();
    for (std::size_t u = 0; u < train.rows(); ++u) {
        const auto items = rows.inner_of(u);
        const auto vals = rows.values_of(u);
        for (std::size_t k = 0; k < items.size(); ++k) {
            if (!(vals[k] > 0.0f)) {
                continue;
            }
            const double pred = predict(x, theta, u, items[k]);
            const double c = 1.0 + alpha * static_cast<double>(vals[k]);
            total += c * (1.0 - pred) * (1.0 - pred) - pred * pred;
        }
    }
    double reg = 0.0;
    for (float v : x.data()) {
        reg += static_cast<double>(v) * static_cast<double>(v);
    }
    for (float v : theta.data()) {
        reg += static_cast<double>(v) * static_cast<double>(v);
    }
    return total + lambda * reg;
}

double mean_percentile_rank(const FactorMatrix& x, const FactorMatrix& theta,
                            std::span<const RatingTriple> test) {
    const std::size_t n = theta.rows();
    if (n < 2) {
        throw ConfigError("mean percentile rank needs at least two items");
    }
    std::vector<RatingTriple> positives;
    for (const RatingTriple& t : test) {
        if (t.user >= x.rows() || t.item >= n) {
            throw BoundsError("test rating outside the model shape");
        }
        if (t.rating > 0.0f) {
            positives.push_back(t);
        }
    }
    if (positives.empty()) {
        throw ConfigError("mean percentile rank needs at least one positive test rating");
    }
    std::stable_sort(positives.begin(), positives.end(),
                     [](const RatingTriple& a, const RatingTriple& b) { return a.user < b.user; });
    std::vector<double> scores(n);
    double sum = 0.0;
    std::size_t current = static_cast<std::size_t>(-1);
    for (const RatingTriple& t : positives) {
        if (t.user != current) {
            current = t.user;
            for (std::size_t v = 0; v < n; ++v) {
                scores[v] = predict(x, theta, current, v);
            }
        }
        const double s = scores[t.item];
        const auto above = std::count_if(scores.begin(), scores.end(),
                                         [s](double o) { return o > s; });
        sum += static_cast<double>(above) / static_cast<double>(n - 1);
    }
    return sum / static_cast<double>(positives.size());
}

TrainResult implicit_train(const SparseRatings& train, std::span<const RatingTriple> test,
                           const ImplicitConfig& cfg) {
    cfg.validate();
    check_implicit_ratings(train);
    const auto run0 = clock_type::now();
    TrainResult out{init_factors(train.rows(), cfg.f, cfg.init_scale, derive_seed(cfg.seed, kSeedX)),
                    init_factors(train.cols(), cfg.f, cfg.init_scale,
                                 derive_seed(cfg.seed, kSeedTheta)),
                    {}};
    TrainReport& report = out.report;
    report.engine = "implicit";
    report.solver = to_string(cfg.solver.method);
    report.precision = to_string(cfg.solver.precision);
    report.f = cfg.f;
    report.initial_objective = implicit_objective(out.x, out.theta, train, cfg.alpha, cfg.lambda);
    for (std::size_t u = 0; u < train.rows(); ++u) {
        report.empty_rows += train.by_row().count(u) == 0 ? 1 : 0;
    }
    for (std::size_t v = 0; v < train.cols(); ++v) {
        report.empty_cols += train.by_col().count(v) == 0 ? 1 : 0;
    }

    // Positive-only preference targets for the reported train RMSE.
    std::vector<RatingTriple> positives;
    for (const RatingTriple& t : train.triples()) {
        if (t.rating > 0.0f) {
            positives.push_back({t.user, t.item, 1.0f});
        }
    }

    const UpdateOptions options{cfg.tile, Regularization::plain, cfg.threads, 64};
    auto [flops, bytes] = als_epoch_cost(train.rows(), train.cols(), train.nnz(), cfg.f, cfg.solver);
    // Two Gram precomputations per epoch.
    const double fd = static_cast<double>(cfg.f);
    flops += static_cast<double>(train.rows() + train.cols()) * fd * (fd + 1.0);

    report.stop_reason = "epochs";
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto epoch0 = clock_type::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.flops_estimate = flops;
        rec.bytes_estimate = bytes;

        auto t0 = clock_type::now();
        std::vector<float> gram = precompute_gram(out.theta, cfg.tile);
        rec.phases.hermitian += seconds_since(t0);
        const SideStats sx = implicit_update_side(train.by_row(), out.theta, gram, out.x,
                                                  cfg.alpha, cfg.lambda, cfg.solver, options);
        rec.phases += sx.times;

        t0 = clock_type::now();
        rec.objective_after_x = implicit_objective(out.x, out.theta, train, cfg.alpha, cfg.lambda);
        rec.phases.eval += seconds_since(t0);

        t0 = clock_type::now();
        gram = precompute_gram(out.x, cfg.tile);
        rec.phases.hermitian += seconds_since(t0);
        const SideStats st = implicit_update_side(train.by_col(), out.x, gram, out.theta,
                                                  cfg.alpha, cfg.lambda, cfg.solver, options);
        rec.phases += st.times;
        rec.cg_iterations = sx.cg_iterations + st.cg_iterations;
        rec.cg_breakdowns = sx.breakdowns + st.breakdowns;

        t0 = clock_type::now();
        rec.objective = implicit_objective(out.x, out.theta, train, cfg.alpha, cfg.lambda);
        rec.train_rmse = positives.empty() ? 0.0 : rmse(out.x, out.theta, positives);
        if (!test.empty()) {
            rec.mean_percentile_rank = mean_percentile_rank(out.x, out.theta, test);
        }
        rec.phases.eval += seconds_since(t0);
        rec.wall_seconds = seconds_since(epoch0);
        report.epochs.push_back(rec);
    }
    report.total_seconds = seconds_since(run0);
    return out;
}

}  // namespace mfals
