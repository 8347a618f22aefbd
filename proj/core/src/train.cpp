#include "mmfusion/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "mmfusion/augment.hpp"
#include "mmfusion/checkpoint.hpp"
#include "mmfusion/data_synth.hpp"
#include "mmfusion/errors.hpp"
#include "mmfusion/metrics.hpp"
#include "mmfusion/optim.hpp"

namespace mmf {

namespace {

std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Tensor<float> image_tensor(const float* ptr, std::size_t h, std::size_t w) {
    Tensor<float> t({1, h, w});
    std::copy(ptr, ptr + h * w, t.data());
    return t;
}

int label_of(const MetadataRow& row, Task task) {
    return task == Task::malignancy ? row.label_malignancy : row.label_calcification;
}

void shuffle_indices(std::vector<std::size_t>& indices, Rng& rng) {
    for (std::size_t i = indices.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(indices[i - 1], indices[j]);
    }
}

}  // namespace

std::vector<int> task_labels(const Dataset& dataset, Task task,
                             const std::vector<std::size_t>& indices) {
    std::vector<int> labels;
    labels.reserve(indices.size());
    for (std::size_t idx : indices) labels.push_back(label_of(dataset.rows[idx], task));
    return labels;
}

std::vector<double> score_samples(const Model<float>& model, const Dataset& dataset,
                                  const std::vector<std::size_t>& indices) {
    const std::size_t h = dataset.desc.height, w = dataset.desc.width;
    const bool pre = model.config().apply_preprocess;
    std::vector<double> scores;
    scores.reserve(indices.size());
    for (std::size_t idx : indices) {
        std::vector<float> buf(dataset.image_ptr(idx), dataset.image_ptr(idx) + h * w);
        if (pre) buf = preprocess(buf, h, w, h, w);
        Tensor<float> img({1, h, w}, std::move(buf));
        Tensor<float> logit = model.forward_record(img, dataset.rows[idx].record);
        scores.push_back(static_cast<double>(logit.item()));
    }
    return scores;
}

double evaluate_auc(const Model<float>& model, const Dataset& dataset, Task task,
                    const std::vector<std::size_t>& indices) {
    return auc(score_samples(model, dataset, indices), task_labels(dataset, task, indices));
}

TrainResult train(const RunConfig& cfg) {
    const Dataset dataset = load_dataset(cfg.data_dir);
    return train(cfg, dataset);
}

TrainResult train(const RunConfig& cfg, const Dataset& dataset) {
    cfg.validate();
    if (dataset.train_indices.empty()) throw ValueError("train: dataset has no train split");
    std::filesystem::create_directories(cfg.out_dir);

    Model<float> model(cfg);
    const std::size_t h = dataset.desc.height, w = dataset.desc.width;
    const std::string cfg_hash = hash_hex(config_hash(cfg));

    // Cache per-sample text encodings and (optionally) preprocessed images.
    std::vector<EncodedText> encoded(dataset.rows.size());
    for (std::size_t i = 0; i < dataset.rows.size(); ++i) {
        encoded[i] = model.encode_record(dataset.rows[i].record);
    }
    std::vector<float> images = dataset.images;
    if (cfg.apply_preprocess) {
        for (std::size_t i = 0; i < dataset.rows.size(); ++i) {
            std::vector<float> buf(dataset.image_ptr(i), dataset.image_ptr(i) + h * w);
            buf = preprocess(buf, h, w, h, w);
            std::copy(buf.begin(), buf.end(), images.begin() + i * h * w);
        }
    }

    // Seeded validation split carved out of the train manifest.
    std::vector<std::size_t> pool = dataset.train_indices;
    Rng split_rng = Rng::keyed(cfg.seed, "valsplit");
    shuffle_indices(pool, split_rng);
    std::size_t n_val = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.val_fraction * static_cast<double>(pool.size()))));
    if (n_val >= pool.size()) n_val = pool.size() - 1;
    std::vector<std::size_t> val_idx(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train_idx(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
    std::sort(val_idx.begin(), val_idx.end());

    const std::size_t steps_per_epoch =
        (train_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(cfg.epochs * static_cast<double>(steps_per_epoch))));
    const auto warmup_steps = static_cast<std::size_t>(
        std::lround(cfg.warmup_epochs * static_cast<double>(steps_per_epoch)));

    AdamW<float> optimizer(model.params(),
                           {cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay});

    std::ostringstream metrics;
    auto log_line = [&metrics, &cfg, &cfg_hash](std::size_t epoch, std::size_t step,
                                                const char* split, double loss, double auc_value,
                                                double lr, bool has_loss, bool has_auc) {
        nlohmann::ordered_json j;
        j["epoch"] = epoch;
        j["step"] = step;
        j["split"] = split;
        if (has_loss) j["loss"] = loss; else j["loss"] = nullptr;
        if (has_auc) j["auc"] = auc_value; else j["auc"] = nullptr;
        j["lr"] = lr;
        j["seed"] = cfg.seed;
        j["config_hash"] = cfg_hash;
        metrics << j.dump() << "\n";
    };

    auto val_auc = [&]() {
        std::vector<double> scores;
        scores.reserve(val_idx.size());
        for (std::size_t idx : val_idx) {
            Tensor<float> img = image_tensor(images.data() + idx * h * w, h, w);
            scores.push_back(static_cast<double>(model.forward(img, encoded[idx]).item()));
        }
        return auc(scores, task_labels(dataset, cfg.task, val_idx));
    };

    TrainResult result;
    double best_auc = -1.0;
    std::vector<std::vector<float>> best_params;
    auto snapshot_params = [&]() {
        best_params.clear();
        for (const auto& entry : model.params()) best_params.push_back(entry.tensor.values());
    };

    GraphF graph;
    std::size_t step = 0;
    std::size_t epoch = 0;
    bool first_batch = true;
    double last_lr = 0.0;
    while (step < total_steps) {
        std::vector<std::size_t> order = train_idx;
        Rng shuffle_rng = Rng::keyed(cfg.seed, "shuffle", epoch);
        shuffle_indices(order, shuffle_rng);

        double epoch_loss = 0.0;
        std::size_t epoch_samples = 0;
        for (std::size_t b0 = 0; b0 < order.size() && step < total_steps; b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
            const auto batch_n = static_cast<float>(b1 - b0);
            optimizer.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t k = b0; k < b1; ++k) {
                const std::size_t idx = order[k];
                std::vector<float> buf(images.begin() + idx * h * w,
                                       images.begin() + (idx + 1) * h * w);
                if (cfg.apply_augment) {
                    buf = augment(buf, h, w, hash_combine(Rng::keyed(cfg.seed, "augment", epoch).next_u64(), idx));
                }
                Tensor<float> img({1, h, w}, std::move(buf));

                graph.reset();
                GraphF::Scope scope(graph);
                Tensor<float> logit = model.forward(img, encoded[idx]);
                Tensor<float> loss = bce_with_logits(logit, label_of(dataset.rows[idx], cfg.task));
                Tensor<float> scaled = scale(loss, 1.0f / batch_n);
                graph.backward(scaled);
                batch_loss += static_cast<double>(loss.item());
            }
            batch_loss /= static_cast<double>(b1 - b0);
            if (!std::isfinite(batch_loss)) {
                throw IoError("train: non-finite loss at step " + std::to_string(step) +
                              " (epoch " + std::to_string(epoch) + "); aborting");
            }
            if (first_batch) {
                result.initial_train_loss = batch_loss;
                first_batch = false;
            }
            epoch_loss += batch_loss * static_cast<double>(b1 - b0);
            epoch_samples += b1 - b0;

            last_lr = lr_at(step, total_steps, warmup_steps, cfg.lr_peak);
            optimizer.step(last_lr);
            ++step;
        }

        const double mean_train_loss = epoch_loss / static_cast<double>(epoch_samples);
        result.final_train_loss = mean_train_loss;
        log_line(epoch, step, "train", mean_train_loss, 0.0, last_lr, true, false);

        const double auc_value = val_auc();
        log_line(epoch, step, "val", 0.0, auc_value, last_lr, false, true);
        if (auc_value > best_auc) {
            best_auc = auc_value;
            snapshot_params();
        }
        ++epoch;
    }

    // Promote the best-validation-AUC parameters into the model before
    // writing the checkpoint. Optimizer moments are from the final step.
    if (!best_params.empty()) {
        ParamStore<float>& store = model.params();
        for (std::size_t i = 0; i < store.size(); ++i) store[i].tensor.values() = best_params[i];
    }

    result.best_val_auc = best_auc;
    result.epochs_run = epoch;
    result.steps_run = step;

    namespace fs = std::filesystem;
    result.metrics_path = (fs::path(cfg.out_dir) / "metrics.jsonl").string();
    result.checkpoint_path = (fs::path(cfg.out_dir) / "checkpoint.bin").string();
    {
        std::ofstream mf(result.metrics_path);
        if (!mf) throw IoError("train: cannot write metrics log");
        mf << metrics.str();
    }
    save_checkpoint(result.checkpoint_path, cfg, model.params(), &optimizer, step, metrics.str());
    return result;
}

}  // namespace mmf
