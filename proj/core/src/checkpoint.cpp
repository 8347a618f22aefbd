#include "mmfusion/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "mmfusion/errors.hpp"

namespace mmf {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'F', 'C', 'K', 'P', 'T', '1'};

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("checkpoint: truncated file");
    return v;
}

void write_string(std::ofstream& out, const std::string& s) {
    write_pod<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::ifstream& in) {
    const auto n = read_pod<std::uint64_t>(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw IoError("checkpoint: truncated string");
    return s;
}

void write_floats(std::ofstream& out, const std::vector<float>& v) {
    write_pod<std::uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> read_floats(std::ifstream& in) {
    const auto n = read_pod<std::uint64_t>(in);
    std::vector<float> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw IoError("checkpoint: truncated tensor payload");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& cfg, const ParamStore<float>& params,
                     AdamW<float>* optimizer, std::uint64_t step, const std::string& metrics_history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, kCheckpointFormatVersion);
    write_pod<std::uint64_t>(out, config_hash(cfg));
    write_string(out, serialize_config(cfg));
    write_string(out, metrics_history);
    write_pod<std::uint64_t>(out, step);

    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& entry : params) {
        write_string(out, entry.name);
        const auto& shape = entry.tensor.shape();
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
        for (std::size_t d : shape) write_pod<std::uint64_t>(out, d);
        write_floats(out, entry.tensor.values());
    }

    const std::uint32_t n_moments =
        optimizer ? static_cast<std::uint32_t>(optimizer->moments_m().size()) : 0;
    write_pod<std::uint32_t>(out, n_moments);
    if (optimizer) {
        for (std::uint32_t i = 0; i < n_moments; ++i) {
            write_floats(out, optimizer->moments_m()[i]);
            write_floats(out, optimizer->moments_v()[i]);
        }
    }
    if (!out) throw IoError("checkpoint: short write to '" + path + "'");
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError("checkpoint: '" + path + "' is not a checkpoint file");
    }
    CheckpointData data;
    data.format_version = read_pod<std::uint32_t>(in);
    if (data.format_version != kCheckpointFormatVersion) {
        throw ConfigError("checkpoint: format version " + std::to_string(data.format_version) +
                          " does not match this build (" + std::to_string(kCheckpointFormatVersion) + ")");
    }
    data.config_hash = read_pod<std::uint64_t>(in);
    data.config_text = read_string(in);
    data.metrics_history = read_string(in);
    data.step = read_pod<std::uint64_t>(in);

    const auto n_params = read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_params; ++i) {
        data.param_names.push_back(read_string(in));
        const auto ndim = read_pod<std::uint32_t>(in);
        std::vector<std::size_t> shape;
        for (std::uint32_t d = 0; d < ndim; ++d) shape.push_back(read_pod<std::uint64_t>(in));
        data.param_shapes.push_back(std::move(shape));
        data.param_values.push_back(read_floats(in));
    }
    const auto n_moments = read_pod<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < n_moments; ++i) {
        data.moments_m.push_back(read_floats(in));
        data.moments_v.push_back(read_floats(in));
    }
    return data;
}

void restore_params(Model<float>& model, const CheckpointData& data) {
    const RunConfig cfg = data.config();
    if (config_hash(cfg) != data.config_hash) {
        throw ConfigError("checkpoint: stored config hash does not match its config text");
    }
    if (config_hash(model.config()) != data.config_hash) {
        throw ConfigError("checkpoint: config hash mismatch between checkpoint and model");
    }
    ParamStore<float>& store = model.params();
    if (store.size() != data.param_names.size()) {
        throw ConfigError("checkpoint: parameter count mismatch");
    }
    for (std::size_t i = 0; i < store.size(); ++i) {
        if (store[i].name != data.param_names[i]) {
            throw ConfigError("checkpoint: parameter '" + data.param_names[i] +
                              "' does not match model parameter '" + store[i].name + "'");
        }
        if (store[i].tensor.shape() != data.param_shapes[i] ||
            store[i].tensor.numel() != data.param_values[i].size()) {
            throw ConfigError("checkpoint: shape mismatch for parameter '" + store[i].name + "'");
        }
        store[i].tensor.values() = data.param_values[i];
    }
}

}  // namespace mmf
