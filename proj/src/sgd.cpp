#include "mfals/sgd.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
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

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(derive_seed(derive_seed(seed, kSeedShuffle), epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

void check_bounds(std::span<const RatingTriple> triples, const FactorMatrix& x,
                  const FactorMatrix& theta) {
    for (const RatingTriple& t : triples) {
        if (t.user >= x.rows() || t.item >= theta.rows()) {
            throw BoundsError("rating (" + std::to_string(t.user) + ", " +
                              std::to_string(t.item) + ") is outside the factor shapes");
        }
    }
}

}  // namespace

void SgdConfig::validate() const {
    if (f < 1) {
        throw ConfigError("f must be at least 1");
    }
    if (!(lambda >= 0.0f)) {
        throw ConfigError("lambda must be non-negative");
    }
    if (epochs < 1) {
        throw ConfigError("epochs must be at least 1");
    }
    if (!(learning_rate > 0.0f)) {
        throw ConfigError("learning rate must be positive");
    }
    if (!(decay >= 0.0f)) {
        throw ConfigError("decay must be non-negative");
    }
    if (workers < 1) {
        throw ConfigError("workers must be at least 1");
    }
    if (!(init_scale > 0.0f)) {
        throw ConfigError("init_scale must be positive");
    }
}

float SgdConfig::rate_at(std::size_t epoch) const {
    return learning_rate / (1.0f + decay * static_cast<float>(epoch));
}

const char* to_string(SgdMode mode) { return mode == SgdMode::hogwild ? "hogwild" : "serial"; }

float sgd_step(std::span<float> x, std::span<float> theta, float r, float alpha, float lambda) {
    const std::size_t f = x.size();
    const float e = dot(x, theta) - r;
    // Any inf or NaN in the output turns `poison` into NaN.
    float poison = 0.0f;
    for (std::size_t k = 0; k < f; ++k) {
        const float xk = x[k];
        const float tk = theta[k];
        x[k] = xk - alpha * (e * tk + lambda * xk);
        theta[k] = tk - alpha * (e * xk + lambda * tk);
        poison += x[k] * 0.0f + theta[k] * 0.0f;
    }
    if (!std::isfinite(e) || !std::isfinite(poison)) {
        throw NumericalError("SGD diverged (non-finite factors); try a smaller learning rate");
    }
    return e;
}

void sgd_epoch(std::span<const RatingTriple> triples, FactorMatrix& x, FactorMatrix& theta,
               const SgdConfig& cfg, std::size_t epoch) {
    cfg.validate();
    if (x.f() != theta.f()) {
        throw ConfigError("sgd_epoch: factor dimensions differ");
    }
    check_bounds(triples, x, theta);
    const std::vector<std::size_t> order = epoch_order(triples.size(), cfg.seed, epoch);
    const float alpha = cfg.rate_at(epoch);

    if (cfg.mode == SgdMode::serial) {
        for (std::size_t i : order) {
            const RatingTriple& t = triples[i];
            sgd_step(x.row(t.user), theta.row(t.item), t.rating, alpha, cfg.lambda);
        }
        return;
    }

    const std::size_t f = x.f();
    const std::size_t total = order.size();
    const int workers = cfg.workers;
    bool diverged = false;

#pragma omp parallel num_threads(workers)
    {
        // Each worker owns one contiguous block of the permutation.
#pragma omp for schedule(static, 1)
        for (int w = 0; w < workers; ++w) {
            const std::size_t begin = total * static_cast<std::size_t>(w) / workers;
            const std::size_t end = total * static_cast<std::size_t>(w + 1) / workers;
            std::vector<float> xl(f);
            std::vector<float> tl(f);
            try {
                for (std::size_t p = begin; p < end; ++p) {
                    const RatingTriple& t = triples[order[p]];
                    float* xs = x.row(t.user).data();
                    float* ts = theta.row(t.item).data();
                    for (std::size_t k = 0; k < f; ++k) {
                        xl[k] = std::atomic_ref<float>(xs[k]).load(std::memory_order_relaxed);
                        tl[k] = std::atomic_ref<float>(ts[k]).load(std::memory_order_relaxed);
                    }
                    sgd_step(xl, tl, t.rating, alpha, cfg.lambda);
                    for (std::size_t k = 0; k < f; ++k) {
                        std::atomic_ref<float>(xs[k]).store(xl[k], std::memory_order_relaxed);
                        std::atomic_ref<float>(ts[k]).store(tl[k], std::memory_order_relaxed);
                    }
                }
            } catch (const NumericalError&) {
#pragma omp atomic write
                diverged = true;
            }
        }
    }
    if (diverged) {
        throw NumericalError("SGD diverged (non-finite factors); try a smaller learning rate");
    }
}

TrainResult sgd_train(const SparseRatings& train, std::span<const RatingTriple> test,
                      const SgdConfig& cfg) {
    cfg.validate();
    const auto run0 = clock_type::now();
    TrainResult out{init_factors(train.rows(), cfg.f, cfg.init_scale, derive_seed(cfg.seed, kSeedX)),
                    init_factors(train.cols(), cfg.f, cfg.init_scale,
                                 derive_seed(cfg.seed, kSeedTheta)),
                    {}};
    TrainReport& report = out.report;
    report.engine = "sgd";
    report.solver = to_string(cfg.mode);
    report.precision = "fp32";
    report.f = cfg.f;
    report.initial_objective = objective(out.x, out.theta, train, cfg.lambda);
    for (std::size_t u = 0; u < train.rows(); ++u) {
        report.empty_rows += train.by_row().count(u) == 0 ? 1 : 0;
    }
    for (std::size_t v = 0; v < train.cols(); ++v) {
        report.empty_cols += train.by_col().count(v) == 0 ? 1 : 0;
    }

    const std::vector<RatingTriple> triples = train.triples();
    const double fd = static_cast<double>(cfg.f);
    const double nz = static_cast<double>(train.nnz());

    report.stop_reason = "epochs";
    for (std::size_t k = 0; k < cfg.epochs; ++k) {
        const auto epoch0 = clock_type::now();
        EpochRecord rec;
        rec.epoch = k + 1;
        rec.learning_rate = cfg.rate_at(k);
        rec.flops_estimate = nz * 12.0 * fd;
        rec.bytes_estimate = nz * (16.0 * fd + 12.0);

        auto t0 = clock_type::now();
        sgd_epoch(triples, out.x, out.theta, cfg, k);
        rec.phases.sgd = seconds_since(t0);

        t0 = clock_type::now();
        rec.objective = objective(out.x, out.theta, train, cfg.lambda);
        rec.train_rmse = train.nnz() ? rmse(out.x, out.theta, train) : 0.0;
        if (!test.empty()) {
            rec.test_rmse = rmse(out.x, out.theta, test);
        }
        rec.phases.eval = seconds_since(t0);
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
