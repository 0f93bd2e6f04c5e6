#include "posegen/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace posegen {

static_assert(std::endian::native == std::endian::little,
              "container layout assumes a little-endian host");

namespace {
constexpr char kMagic[4] = {'P', 'G', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(std::ifstream& in, const std::string& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (in.gcount() != sizeof v) throw IoError("truncated container: " + path);
    return v;
}
}  // namespace

void save_container(const std::filesystem::path& path,
                    const std::vector<TensorRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for write: " + path.string());
    out.write(kMagic, 4);
    put(out, kVersion);
    put(out, uint64_t(records.size()));
    for (const auto& r : records) {
        put(out, uint32_t(r.name.size()));
        out.write(r.name.data(), std::streamsize(r.name.size()));
        put(out, uint32_t(r.shape.size()));
        int64_t n = 1;
        for (int64_t d : r.shape) {
            put(out, uint64_t(d));
            n *= d;
        }
        if (n != int64_t(r.data.size())) {
            throw IoError("record '" + r.name + "': data size " +
                          std::to_string(r.data.size()) + " does not match shape");
        }
        out.write(reinterpret_cast<const char*>(r.data.data()),
                  std::streamsize(r.data.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write: " + path.string());
}

std::vector<TensorRecord> load_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for read: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("bad magic, not a checkpoint container: " + path.string());
    }
    uint32_t version = take<uint32_t>(in, path.string());
    if (version != kVersion) {
        throw IoError("unsupported container version " + std::to_string(version) + " in " +
                      path.string());
    }
    uint64_t count = take<uint64_t>(in, path.string());
    std::vector<TensorRecord> out;
    out.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        TensorRecord r;
        uint32_t name_len = take<uint32_t>(in, path.string());
        r.name.resize(name_len);
        in.read(r.name.data(), std::streamsize(name_len));
        if (in.gcount() != std::streamsize(name_len)) {
            throw IoError("truncated container: " + path.string());
        }
        uint32_t rank = take<uint32_t>(in, path.string());
        int64_t n = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            uint64_t e = take<uint64_t>(in, path.string());
            r.shape.push_back(int64_t(e));
            n *= int64_t(e);
        }
        r.data.resize(size_t(n));
        in.read(reinterpret_cast<char*>(r.data.data()),
                std::streamsize(r.data.size() * sizeof(float)));
        if (in.gcount() != std::streamsize(r.data.size() * sizeof(float))) {
            throw IoError("truncated container: " + path.string());
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace posegen
