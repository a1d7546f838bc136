#include "mfals/report.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "mfals/error.hpp"

namespace mfals {

using nlohmann::json;

namespace {

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
    if (v) {
        j[key] = *v;
    }
}

template <typename T>
std::optional<T> get_optional(const json& j, const char* key) {
    if (auto it = j.find(key); it != j.end() && !it->is_null()) {
        return it->get<T>();
    }
    return std::nullopt;
}

PhaseTimes phases_from_json(const json& j) {
    PhaseTimes t;
    t.hermitian = j.value("hermitian", 0.0);
    t.hermitian_stage = j.value("hermitian_stage", 0.0);
    t.hermitian_accumulate = j.value("hermitian_accumulate", 0.0);
    t.hermitian_store = j.value("hermitian_store", 0.0);
    t.bias = j.value("bias", 0.0);
    t.solve = j.value("solve", 0.0);
    t.sgd = j.value("sgd", 0.0);
    t.eval = j.value("eval", 0.0);
    return t;
}

}  // namespace

PhaseTimes& PhaseTimes::operator+=(const PhaseTimes& other) {
    hermitian += other.hermitian;
    hermitian_stage += other.hermitian_stage;
    hermitian_accumulate += other.hermitian_accumulate;
    hermitian_store += other.hermitian_store;
    bias += other.bias;
    solve += other.solve;
    sgd += other.sgd;
    eval += other.eval;
    return *this;
}

json to_json(const PhaseTimes& t) {
    return json{{"hermitian", t.hermitian},
                {"hermitian_stage", t.hermitian_stage},
                {"hermitian_accumulate", t.hermitian_accumulate},
                {"hermitian_store", t.hermitian_store},
                {"bias", t.bias},
                {"solve", t.solve},
                {"sgd", t.sgd},
                {"eval", t.eval}};
}

json to_json(const EpochRecord& r) {
    json j{{"type", "epoch"},
           {"epoch", r.epoch},
           {"objective", r.objective},
           {"train_rmse", r.train_rmse},
           {"phases", to_json(r.phases)},
           {"wall_seconds", r.wall_seconds},
           {"flops_estimate", r.flops_estimate},
           {"bytes_estimate", r.bytes_estimate},
           {"cg_iterations", r.cg_iterations},
           {"cg_breakdowns", r.cg_breakdowns}};
    put_optional(j, "objective_after_x", r.objective_after_x);
    put_optional(j, "test_rmse", r.test_rmse);
    put_optional(j, "mean_percentile_rank", r.mean_percentile_rank);
    put_optional(j, "learning_rate", r.learning_rate);
    return j;
}

json summary_json(const TrainReport& report) {
    json j{{"type", "summary"},
           {"engine", report.engine},
           {"solver", report.solver},
           {"precision", report.precision},
           {"f", report.f},
           {"epochs_run", report.epochs_run()},
           {"stop_reason", report.stop_reason},
           {"empty_rows", report.empty_rows},
           {"empty_cols", report.empty_cols},
           {"total_seconds", report.total_seconds}};
    put_optional(j, "initial_objective", report.initial_objective);
    if (!report.epochs.empty()) {
        const EpochRecord& last = report.epochs.back();
        j["final_objective"] = last.objective;
        j["final_train_rmse"] = last.train_rmse;
        put_optional(j, "final_test_rmse", last.test_rmse);
    }
    return j;
}

void write_report(std::ostream& out, const TrainReport& report) {
    for (const EpochRecord& r : report.epochs) {
        out << to_json(r).dump() << '\n';
    }
    out << summary_json(report).dump() << '\n';
}

void save_report(const std::string& path, const TrainReport& report) {
    std::ofstream out(path);
    if (!out) {
        throw DataError("cannot open " + path + " for writing");
    }
    write_report(out, report);
}

TrainReport read_report(std::istream& in) {
    TrainReport report;
    std::string line;
    bool saw_summary = false;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw FormatError(std::string("bad report line: ") + e.what());
        }
        const std::string type = j.is_object() ? j.value("type", "") : "";
        try {
            if (type == "epoch") {
                EpochRecord r;
                r.epoch = j.at("epoch").get<std::size_t>();
                r.objective = j.at("objective").get<double>();
                r.train_rmse = j.at("train_rmse").get<double>();
                r.objective_after_x = get_optional<double>(j, "objective_after_x");
                r.test_rmse = get_optional<double>(j, "test_rmse");
                r.mean_percentile_rank = get_optional<double>(j, "mean_percentile_rank");
                r.learning_rate = get_optional<double>(j, "learning_rate");
                r.phases = phases_from_json(j.value("phases", json::object()));
                r.wall_seconds = j.value("wall_seconds", 0.0);
                r.flops_estimate = j.value("flops_estimate", 0.0);
                r.bytes_estimate = j.value("bytes_estimate", 0.0);
                r.cg_iterations = j.value("cg_iterations", std::size_t{0});
                r.cg_breakdowns = j.value("cg_breakdowns", std::size_t{0});
                report.epochs.push_back(r);
            } else if (type == "summary") {
                saw_summary = true;
                report.engine = j.value("engine", "");
                report.solver = j.value("solver", "");
                report.precision = j.value("precision", "");
                report.f = j.value("f", std::size_t{0});
                report.stop_reason = j.value("stop_reason", "");
                report.empty_rows = j.value("empty_rows", std::size_t{0});
                report.empty_cols = j.value("empty_cols", std::size_t{0});
                report.total_seconds = j.value("total_seconds", 0.0);
                report.initial_objective = get_optional<double>(j, "initial_objective");
            } else {
                throw FormatError("unknown report record type '" + type + "'");
            }
        } catch (const json::exception& e) {
            throw FormatError("bad " + type + " record: " + e.what());
        }
    }
    if (!saw_summary) {
        throw FormatError("report has no summary record");
    }
    return report;
}

TrainReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError("cannot open " + path);
    }
    return read_report(in);
}

}  // namespace mfals
