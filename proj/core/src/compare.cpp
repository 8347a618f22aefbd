#include "mmfusion/compare.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mmfusion/errors.hpp"
#include "mmfusion/train.hpp"

namespace mmf {

namespace {

std::string cell_label(const std::string& aggregator, Pooling pooling, std::size_t n_tokens) {
    std::string label = aggregator;
    if (pooling == Pooling::max) label += "+";
    if (n_tokens == 512) label += " large";
    return label;
}

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

double CompareCell::mean() const {
    double s = 0.0;
    for (double a : aucs) s += a;
    return aucs.empty() ? 0.0 : s / static_cast<double>(aucs.size());
}

double CompareCell::sd() const {
    if (aucs.size() < 2) return 0.0;
    const double m = mean();
    double s = 0.0;
    for (double a : aucs) s += (a - m) * (a - m);
    return std::sqrt(s / static_cast<double>(aucs.size() - 1));
}

CompareResult compare_run(const RunConfig& cfg, bool ablate) {
    namespace fs = std::filesystem;
    struct TaskData {
        Task task;
        std::string dir;
    };
    std::vector<TaskData> tasks;
    if (!cfg.compare_data_malignancy.empty()) tasks.push_back({Task::malignancy, cfg.compare_data_malignancy});
    if (!cfg.compare_data_calcification.empty()) {
        tasks.push_back({Task::calcification, cfg.compare_data_calcification});
    }
    if (tasks.empty()) {
        throw ConfigError("compare: set compare_data_malignancy and/or compare_data_calcification");
    }
    if (cfg.compare_seeds.empty()) throw ConfigError("compare: compare_seeds is empty");

    fs::create_directories(cfg.out_dir);
    CompareResult result;

    auto run_cell = [&cfg](const Dataset& dataset, Task task, const std::string& data_dir,
                           const std::string& aggregator, std::size_t n_tokens, Pooling pooling,
                           std::uint64_t seed) {
        RunConfig cell = cfg;
        cell.task = task;
        cell.data_dir = data_dir;
        cell.aggregator = parse_aggregator(aggregator);
        cell.depth = cfg.depth;  // 0 keeps the kind's default block count
        cell.heads = cfg.heads;
        cell.n_tokens = n_tokens;
        cell.pooling = pooling;
        cell.seed = seed;
        cell.out_dir = (std::filesystem::path(cfg.out_dir) / "cells" /
                        (std::string(to_string(task)) + "_" + aggregator + "_n" +
                         std::to_string(n_tokens) + "_" + to_string(pooling) + "_s" +
                         std::to_string(seed)))
                           .string();
        return train(cell, dataset).best_val_auc;
    };

    for (const auto& td : tasks) {
        const Dataset dataset = load_dataset(td.dir);
        for (const auto& aggregator : cfg.compare_aggregators) {
            parse_aggregator(aggregator);  // fail fast on typos
            CompareCell cell;
            cell.task = td.task;
            cell.aggregator = aggregator;
            cell.n_tokens = cfg.n_tokens;
            cell.pooling = cfg.pooling;
            cell.label = cell_label(aggregator, cfg.pooling, cfg.n_tokens);
            for (std::uint64_t seed : cfg.compare_seeds) {
                cell.aucs.push_back(
                    run_cell(dataset, td.task, td.dir, aggregator, cfg.n_tokens, cfg.pooling, seed));
            }
            result.cells.push_back(std::move(cell));
        }
        if (ablate) {
            for (std::size_t n : cfg.ablate_tokens) {
                for (Pooling pooling : {Pooling::max, Pooling::mean}) {
                    CompareCell cell;
                    cell.task = td.task;
                    cell.aggregator = "co";
                    cell.n_tokens = n;
                    cell.pooling = pooling;
                    cell.label = cell_label("co", pooling, n);
                    for (std::uint64_t seed : cfg.compare_seeds) {
                        cell.aucs.push_back(run_cell(dataset, td.task, td.dir, "co", n, pooling, seed));
                    }
                    result.cells.push_back(std::move(cell));
                }
            }
        }
    }

    result.csv_path = (fs::path(cfg.out_dir) / "compare.csv").string();
    std::ofstream out(result.csv_path);
    if (!out) throw IoError("compare: cannot write '" + result.csv_path + "'");
    out << compare_csv_text(result);
    return result;
}

std::string compare_csv_text(const CompareResult& result) {
    std::string csv = "task,aggregator,label,n_tokens,pooling,n_seeds,auc_mean,auc_sd,aucs\n";
    for (const auto& cell : result.cells) {
        csv += std::string(to_string(cell.task)) + "," + cell.aggregator + "," + cell.label + "," +
               std::to_string(cell.n_tokens) + "," + to_string(cell.pooling) + "," +
               std::to_string(cell.aucs.size()) + "," + fmt6(cell.mean()) + "," + fmt6(cell.sd()) + ",";
        for (std::size_t i = 0; i < cell.aucs.size(); ++i) {
            if (i) csv += ";";
            csv += fmt6(cell.aucs[i]);
        }
        csv += "\n";
    }
    return csv;
}

}  // namespace mmf
