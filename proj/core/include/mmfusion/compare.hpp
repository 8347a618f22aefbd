#pragma once

#include <string>
#include <vector>

#include "mmfusion/config.hpp"

namespace mmf {

struct CompareCell {
    Task task = Task::malignancy;
    std::string aggregator;
    std::string label;  // figure-style label: "+" = max pooling, "large" = 512 tokens
    std::size_t n_tokens = 0;
    Pooling pooling = Pooling::max;
    std::vector<double> aucs;  // one per seed

    double mean() const;
    double sd() const;
};

struct CompareResult {
    std::vector<CompareCell> cells;
    std::string csv_path;
};

// Trains one cell per (task, aggregator, seed) on the per-task datasets
// configured in cfg (compare_data_malignancy / compare_data_calcification)
// and writes a CSV of mean +/- sd AUC per cell. With ablate=true, also
// sweeps the configured token counts against max/mean pooling for the
// co-attention aggregator.
CompareResult compare_run(const RunConfig& cfg, bool ablate);

std::string compare_csv_text(const CompareResult& result);

}  // namespace mmf
