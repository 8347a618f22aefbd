#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mmfusion/config.hpp"
#include "mmfusion/model.hpp"
#include "mmfusion/optim.hpp"

namespace mmf {

// Self-describing binary container: config text (and hash), step counter,
// metrics history, named parameter tensors, optimizer moments. Raw
// little-endian f32 payloads, so reload reproduces forward passes bitwise.
struct CheckpointData {
    std::uint32_t format_version = 0;
    std::uint64_t config_hash = 0;
    std::string config_text;
    std::string metrics_history;
    std::uint64_t step = 0;
    std::vector<std::string> param_names;
    std::vector<std::vector<std::size_t>> param_shapes;
    std::vector<std::vector<float>> param_values;
    std::vector<std::vector<float>> moments_m;
    std::vector<std::vector<float>> moments_v;

    RunConfig config() const { return parse_config_text(config_text); }
};

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

void save_checkpoint(const std::string& path, const RunConfig& cfg, const ParamStore<float>& params,
                     AdamW<float>* optimizer, std::uint64_t step, const std::string& metrics_history);

CheckpointData load_checkpoint(const std::string& path);

// Restores parameter values into a model built from the checkpoint's own
// config. Verifies the format version and the stored config hash.
void restore_params(Model<float>& model, const CheckpointData& data);

}  // namespace mmf
