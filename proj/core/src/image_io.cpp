#include "posegen/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

namespace posegen {

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
    if (rgb.rank() != 3 || rgb.size(0) != 3) {
        throw ShapeError("write_ppm expects [3,H,W], got " + shape_str(rgb.shape()));
    }
    const int64_t H = rgb.size(1), W = rgb.size(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out << "P6\n" << W << " " << H << "\n255\n";
    std::vector<unsigned char> row(size_t(W) * 3);
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                float v = std::clamp(rgb.data()[size_t((c * H + y) * W + x)], 0.0f, 1.0f);
                row[size_t(x * 3 + c)] = (unsigned char)std::lround(v * 255.0f);
            }
        out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
    if (!out) throw IoError("short write: " + path.string());
}

Tensor read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P6") throw IoError("not a P6 file: " + path.string());
    // header tokens may be separated by whitespace or comments
    auto next_int = [&]() -> int64_t {
        for (;;) {
            int ch = in.peek();
            if (ch == '#') {
                std::string junk;
                std::getline(in, junk);
            } else if (std::isspace(ch)) {
                in.get();
            } else {
                break;
            }
        }
        int64_t v = 0;
        in >> v;
        if (!in) throw IoError("bad header: " + path.string());
        return v;
    };
    int64_t W = next_int(), H = next_int(), maxval = next_int();
    if (maxval != 255) throw IoError("unsupported maxval in " + path.string());
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> buf(size_t(W * H) * 3);
    in.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
    if (in.gcount() != std::streamsize(buf.size())) {
        throw IoError("truncated pixel data: " + path.string());
    }
    Tensor rgb({3, H, W});
    auto& d = rgb.mut_data();
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c)
                d[size_t((c * H + y) * W + x)] =
                    float(buf[size_t((y * W + x) * 3 + c)]) / 255.0f;
    return rgb;
}

}  // namespace posegen
