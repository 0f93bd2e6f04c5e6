#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "posegen/tensor.hpp"

namespace posegen {

// On-disk tensor container. Layout, all little-endian:
//   magic "PGCK" | u32 version (1) | u64 record count | records...
// record: u32 name_len | name bytes | u32 rank | u64 extents[rank] | f32 data
// Round trips are bit-exact.
struct TensorRecord {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

void save_container(const std::filesystem::path& path,
                    const std::vector<TensorRecord>& records);
std::vector<TensorRecord> load_container(const std::filesystem::path& path);

}  // namespace posegen
