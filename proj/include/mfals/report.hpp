#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace mfals {

// Seconds spent per phase. Values are summed over workers, so they equal wall
// time only when one thread runs.
struct PhaseTimes {
    double hermitian = 0.0;
    double hermitian_stage = 0.0;
    double hermitian_accumulate = 0.0;
    double hermitian_store = 0.0;
    double bias = 0.0;
    double solve = 0.0;
    double sgd = 0.0;
    double eval = 0.0;

    PhaseTimes& operator+=(const PhaseTimes& other);
};

// Outcome of one ALS half-update.
struct SideStats {
    PhaseTimes times;
    double wall_seconds = 0.0;
    std::size_t rows_solved = 0;
    std::size_t rows_skipped = 0;
    std::size_t cg_iterations = 0;
    std::size_t breakdowns = 0;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double objective = 0.0;
    std::optional<double> objective_after_x;
    double train_rmse = 0.0;
    std::optional<double> test_rmse;
    std::optional<double> mean_percentile_rank;
    std::optional<double> learning_rate;
    PhaseTimes phases;
    double wall_seconds = 0.0;
    double flops_estimate = 0.0;
    double bytes_estimate = 0.0;
    std::size_t cg_iterations = 0;
    std::size_t cg_breakdowns = 0;
};

// One record per completed epoch plus run-level metadata.
struct TrainReport {
    std::string engine;
    std::string solver;
    std::string precision;
    std::size_t f = 0;
    std::optional<double> initial_objective;
    std::vector<EpochRecord> epochs;
    std::string stop_reason;
    // Rows/columns without training ratings keep their initial vectors.
    std::size_t empty_rows = 0;
    std::size_t empty_cols = 0;
    double total_seconds = 0.0;

    std::size_t epochs_run() const { return epochs.size(); }
};

nlohmann::json to_json(const PhaseTimes& t);
nlohmann::json to_json(const EpochRecord& r);
nlohmann::json summary_json(const TrainReport& report);

// Line-delimited JSON: one {"type":"epoch",...} line per epoch, then one
// {"type":"summary",...} line.
void write_report(std::ostream& out, const TrainReport& report);
void save_report(const std::string& path, const TrainReport& report);
TrainReport read_report(std::istream& in);
TrainReport load_report(const std::string& path);

}  // namespace mfals
