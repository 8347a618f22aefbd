#pragma once

#include <string>
#include <vector>

#include "mmfusion/config.hpp"
#include "mmfusion/dataset_io.hpp"
#include "mmfusion/model.hpp"

namespace mmf {

struct TrainResult {
    double best_val_auc = 0.0;
    double initial_train_loss = 0.0;  // mean loss of the first batch
    double final_train_loss = 0.0;    // mean loss of the last epoch
    std::size_t epochs_run = 0;
    std::size_t steps_run = 0;
    std::string checkpoint_path;
    std::string metrics_path;
};

// Runs the full optimization loop for cfg on the dataset in cfg.data_dir:
// seeded 90/10-style train/validation split of the train manifest, AdamW
// with warmup+cosine schedule, per-epoch validation AUC, best-AUC parameter
// retention, JSON-lines metrics log, and a checkpoint written to
// cfg.out_dir. Reference single-threaded execution; bitwise reproducible
// for a given (config, seed).
TrainResult train(const RunConfig& cfg);
TrainResult train(const RunConfig& cfg, const Dataset& dataset);

// Logit scores for the given sample indices (no tape, forward only).
std::vector<double> score_samples(const Model<float>& model, const Dataset& dataset,
                                  const std::vector<std::size_t>& indices);

// Labels for the configured task.
std::vector<int> task_labels(const Dataset& dataset, Task task,
                             const std::vector<std::size_t>& indices);

// AUC of a model over the given indices.
double evaluate_auc(const Model<float>& model, const Dataset& dataset, Task task,
                    const std::vector<std::size_t>& indices);

}  // namespace mmf
