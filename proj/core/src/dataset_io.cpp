#include "mmfusion/dataset_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mmfusion/errors.hpp"

namespace mmf {

namespace {

std::vector<std::string> split_line(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

void write_images(const std::string& bin_path, const std::string& desc_path,
                  const std::vector<float>& data, const ImagesDesc& desc) {
    const std::size_t expected = desc.count * desc.height * desc.width * desc.channels;
    if (data.size() != expected) {
        throw IoError("write_images: buffer has " + std::to_string(data.size()) + " values, expected " +
                      std::to_string(expected));
    }
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw IoError("write_images: cannot open '" + bin_path + "'");
    bin.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!bin) throw IoError("write_images: short write to '" + bin_path + "'");

    std::ofstream ds(desc_path);
    if (!ds) throw IoError("write_images: cannot open '" + desc_path + "'");
    ds << "count = " << desc.count << "\n"
       << "height = " << desc.height << "\n"
       << "width = " << desc.width << "\n"
       << "channels = " << desc.channels << "\n"
       << "dtype = " << desc.dtype << "\n";
}

ImagesDesc read_images_desc(const std::string& desc_path) {
    std::ifstream in(desc_path);
    if (!in) throw IoError("read_images_desc: cannot open '" + desc_path + "'");
    ImagesDesc desc;
    std::string line;
    while (std::getline(in, line)) {
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string value = line.substr(eq + 1);
        auto trim = [](std::string s) {
            std::size_t a = s.find_first_not_of(" \t\r");
            std::size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        key = trim(key);
        value = trim(value);
        if (key == "count") desc.count = std::stoull(value);
        else if (key == "height") desc.height = std::stoull(value);
        else if (key == "width") desc.width = std::stoull(value);
        else if (key == "channels") desc.channels = std::stoull(value);
        else if (key == "dtype") desc.dtype = value;
    }
    if (desc.dtype != "f32") throw IoError("read_images_desc: unsupported dtype '" + desc.dtype + "'");
    return desc;
}

std::vector<float> read_images(const std::string& bin_path, const ImagesDesc& desc) {
    std::ifstream bin(bin_path, std::ios::binary | std::ios::ate);
    if (!bin) throw IoError("read_images: cannot open '" + bin_path + "'");
    const std::size_t expected = desc.count * desc.height * desc.width * desc.channels;
    const auto bytes = static_cast<std::size_t>(bin.tellg());
    if (bytes != expected * sizeof(float)) {
        throw IoError("read_images: '" + bin_path + "' has " + std::to_string(bytes) +
                      " bytes, sidecar expects " + std::to_string(expected * sizeof(float)));
    }
    std::vector<float> data(expected);
    bin.seekg(0);
    bin.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!bin) throw IoError("read_images: short read from '" + bin_path + "'");
    return data;
}

void write_metadata_csv(const std::string& path, const std::vector<MetadataRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("write_metadata_csv: cannot open '" + path + "'");
    out << metadata_csv_header() << "\n";
    for (const auto& row : rows) {
        const auto& r = row.record;
        out << row.exam_id << ',' << row.image_id << ',';
        if (r.age) out << *r.age;
        out << ',';
        if (r.nationality) out << *r.nationality;
        out << ',';
        if (r.device_manufacturer) out << *r.device_manufacturer;
        out << ',';
        if (r.device_model) out << *r.device_model;
        out << ',';
        if (r.institution) out << *r.institution;
        out << ',';
        if (r.exam_year) out << *r.exam_year;
        out << ',';
        if (r.breast_density) out << *r.breast_density;
        out << ',';
        if (r.birads) out << *r.birads;
        out << ',' << row.label_malignancy << ',' << row.label_calcification << "\n";
    }
}

std::vector<MetadataRow> read_metadata_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_metadata_csv: cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw IoError("read_metadata_csv: empty file '" + path + "'");
    if (split_line(line, ',') != split_line(metadata_csv_header(), ',')) {
        throw IoError("read_metadata_csv: unexpected header in '" + path + "'");
    }
    std::vector<MetadataRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_line(line, ',');
        if (cells.size() != 12) {
            throw IoError("read_metadata_csv: row with " + std::to_string(cells.size()) +
                          " cells in '" + path + "'");
        }
        MetadataRow row;
        row.exam_id = cells[0];
        row.image_id = cells[1];
        if (!cells[2].empty()) row.record.age = std::stoi(cells[2]);
        if (!cells[3].empty()) row.record.nationality = cells[3];
        if (!cells[4].empty()) row.record.device_manufacturer = cells[4];
        if (!cells[5].empty()) row.record.device_model = cells[5];
        if (!cells[6].empty()) row.record.institution = cells[6];
        if (!cells[7].empty()) row.record.exam_year = std::stoi(cells[7]);
        if (!cells[8].empty()) row.record.breast_density = cells[8][0];
        if (!cells[9].empty()) row.record.birads = std::stoi(cells[9]);
        row.label_malignancy = std::stoi(cells[10]);
        row.label_calcification = std::stoi(cells[11]);
        row.record.validate();
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_splits(const std::string& path, const std::vector<std::size_t>& train,
                  const std::vector<std::size_t>& test) {
    nlohmann::ordered_json j;
    j["train"] = train;
    j["test"] = test;
    std::ofstream out(path);
    if (!out) throw IoError("write_splits: cannot open '" + path + "'");
    out << j.dump(2) << "\n";
}

void read_splits(const std::string& path, std::vector<std::size_t>& train,
                 std::vector<std::size_t>& test) {
    std::ifstream in(path);
    if (!in) throw IoError("read_splits: cannot open '" + path + "'");
    nlohmann::json j;
    in >> j;
    train = j.at("train").get<std::vector<std::size_t>>();
    test = j.at("test").get<std::vector<std::size_t>>();
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path base(dir);
    if (!fs::exists(base)) throw IoError("load_dataset: directory '" + dir + "' does not exist");
    Dataset ds;
    ds.desc = read_images_desc((base / "images.desc").string());
    ds.images = read_images((base / "images.bin").string(), ds.desc);
    ds.rows = read_metadata_csv((base / "metadata.csv").string());
    if (ds.rows.size() != ds.desc.count) {
        throw IoError("load_dataset: metadata has " + std::to_string(ds.rows.size()) +
                      " rows but sidecar declares " + std::to_string(ds.desc.count) + " images");
    }
    read_splits((base / "splits.json").string(), ds.train_indices, ds.test_indices);
    for (std::size_t idx : ds.train_indices) {
        if (idx >= ds.rows.size()) throw IoError("load_dataset: train index out of range");
    }
    for (std::size_t idx : ds.test_indices) {
        if (idx >= ds.rows.size()) throw IoError("load_dataset: test index out of range");
    }
    return ds;
}

}  // namespace mmf
