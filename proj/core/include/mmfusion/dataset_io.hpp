#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mmfusion/report.hpp"

namespace mmf {

struct ImagesDesc {
    std::size_t count = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    std::string dtype = "f32";
};

// images.bin: raw little-endian f32, row-major, sample-major, described by a
// plain-text sidecar (images.desc) with count/height/width/channels/dtype.
void write_images(const std::string& bin_path, const std::string& desc_path,
                  const std::vector<float>& data, const ImagesDesc& desc);
ImagesDesc read_images_desc(const std::string& desc_path);
std::vector<float> read_images(const std::string& bin_path, const ImagesDesc& desc);

struct MetadataRow {
    std::string exam_id;
    std::string image_id;
    MetadataRecord record;
    int label_malignancy = 0;
    int label_calcification = 0;
};

inline const char* metadata_csv_header() {
    return "exam_id,image_id,age,nationality,device_manufacturer,device_model,institution,"
           "exam_year,breast_density,birads,label_malignancy,label_calcification";
}

void write_metadata_csv(const std::string& path, const std::vector<MetadataRow>& rows);
std::vector<MetadataRow> read_metadata_csv(const std::string& path);

// splits.json lists sample indices per split.
void write_splits(const std::string& path, const std::vector<std::size_t>& train,
                  const std::vector<std::size_t>& test);
void read_splits(const std::string& path, std::vector<std::size_t>& train,
                 std::vector<std::size_t>& test);

// Fully loaded dataset directory.
struct Dataset {
    ImagesDesc desc;
    std::vector<float> images;
    std::vector<MetadataRow> rows;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;

    std::size_t image_pixels() const { return desc.height * desc.width; }
    const float* image_ptr(std::size_t index) const { return images.data() + index * image_pixels(); }
};

Dataset load_dataset(const std::string& dir);

}  // namespace mmf
