#pragma once

#include <filesystem>
#include <string>

#include "posegen/tensor.hpp"

namespace posegen {

// Binary PPM (P6), maxval 255. Values clamp to [0,1] and round on write.
void write_ppm(const std::filesystem::path& path, const Tensor& rgb /* [3,H,W] */);
Tensor read_ppm(const std::filesystem::path& path);  // [3,H,W] in [0,1]

}  // namespace posegen
