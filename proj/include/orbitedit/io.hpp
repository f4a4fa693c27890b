#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "orbitedit/view_stack.hpp"

namespace orbitedit::io {

namespace fs = std::filesystem;

// Named-tensor container in the safetensors layout: 8-byte little-endian header
// length, a JSON header mapping names to {dtype, shape, data_offsets}, then the
// raw little-endian payload. Only F32 and U8 are produced or accepted.
struct Tensor {
    enum class DType { f32, u8 };
    DType dtype = DType::f32;
    std::vector<std::int64_t> shape;
    std::vector<float> f32;
    std::vector<std::uint8_t> u8;

    std::size_t numel() const;
};

using TensorMap = std::map<std::string, Tensor>;

std::string encode_tensors(const TensorMap& tensors, const nlohmann::json& metadata = {});
TensorMap decode_tensors(const std::string& bytes, nlohmann::json* metadata = nullptr);

void save_tensors(const fs::path& path, const TensorMap& tensors, const nlohmann::json& metadata = {});
TensorMap load_tensors(const fs::path& path, nlohmann::json* metadata = nullptr);

// Orbit frames as U8 [N, R, R, C]; values in [0,1] are rounded to 0..255.
Tensor orbit_to_u8(const ViewStack& seq);
ViewStack orbit_from_u8(const Tensor& t);

// Writes to a sibling temp file and renames it into place.
void write_atomic(const fs::path& path, const std::string& bytes);
std::string read_file(const fs::path& path);

void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

std::string sha256_hex(const std::string& bytes);

// Horizontal montage of all views (binary PPM for C=3, PGM for C=1).
std::string encode_strip(const ViewStack& seq);
void write_strip(const fs::path& path, const ViewStack& seq);

// Exclusive advisory lock on an output directory (lock file created with
// O_EXCL, removed on destruction).
class DirLock {
public:
    explicit DirLock(const fs::path& dir);
    ~DirLock();
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

private:
    fs::path path_;
};

}  // namespace orbitedit::io
