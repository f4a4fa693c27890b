#include "orbitedit/io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

namespace orbitedit::io {

std::size_t Tensor::numel() const {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

namespace {

const char* dtype_name(Tensor::DType d) { return d == Tensor::DType::f32 ? "F32" : "U8"; }

std::size_t dtype_size(Tensor::DType d) { return d == Tensor::DType::f32 ? 4 : 1; }

void put_u64_le(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::string& in) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
    return v;
}

void append_f32_le(std::string& out, const std::vector<float>& values) {
    static_assert(sizeof(float) == 4);
    for (float f : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
}

}  // namespace

std::string encode_tensors(const TensorMap& tensors, const nlohmann::json& metadata) {
    nlohmann::json header = nlohmann::json::object();
    if (!metadata.is_null() && !metadata.empty()) {
        // safetensors metadata is a flat string -> string map
        header["__metadata__"] = {{"json", metadata.dump()}};
    }
    std::string payload;
    for (const auto& [name, t] : tensors) {
        const std::size_t begin = payload.size();
        if (t.dtype == Tensor::DType::f32) {
            if (t.f32.size() != t.numel()) throw ShapeError("tensor '" + name + "' size does not match shape");
            append_f32_le(payload, t.f32);
        } else {
            if (t.u8.size() != t.numel()) throw ShapeError("tensor '" + name + "' size does not match shape");
            payload.append(reinterpret_cast<const char*>(t.u8.data()), t.u8.size());
        }
        header[name] = {{"dtype", dtype_name(t.dtype)}, {"shape", t.shape}, {"data_offsets", {begin, payload.size()}}};
    }
    std::string head = header.dump();
    while ((head.size() + 8) % 8 != 0) head.push_back(' ');
    std::string out;
    out.reserve(8 + head.size() + payload.size());
    put_u64_le(out, head.size());
    out += head;
    out += payload;
    return out;
}

TensorMap decode_tensors(const std::string& bytes, nlohmann::json* metadata) {
    if (bytes.size() < 8) throw DataError("tensor container truncated");
    const std::uint64_t n = get_u64_le(bytes);
    if (n > bytes.size() - 8) throw DataError("tensor container header length out of range");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(8, n));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("tensor container header is not JSON: ") + e.what());
    }
    const std::size_t base = 8 + n;
    TensorMap out;
    for (const auto& [name, info] : header.items()) {
        if (name == "__metadata__") {
            if (metadata && info.contains("json")) *metadata = nlohmann::json::parse(info["json"].get<std::string>());
            continue;
        }
        Tensor t;
        const auto dtype = info.at("dtype").get<std::string>();
        if (dtype == "F32") t.dtype = Tensor::DType::f32;
        else if (dtype == "U8") t.dtype = Tensor::DType::u8;
        else throw DataError("unsupported dtype '" + dtype + "' for tensor '" + name + "'");
        t.shape = info.at("shape").get<std::vector<std::int64_t>>();
        const auto offs = info.at("data_offsets").get<std::vector<std::size_t>>();
        if (offs.size() != 2 || offs[1] < offs[0] || base + offs[1] > bytes.size())
            throw DataError("bad data offsets for tensor '" + name + "'");
        if (offs[1] - offs[0] != t.numel() * dtype_size(t.dtype))
            throw DataError("tensor '" + name + "' byte length does not match its shape");
        const char* src = bytes.data() + base + offs[0];
        if (t.dtype == Tensor::DType::f32) {
            t.f32.resize(t.numel());
            for (std::size_t k = 0; k < t.numel(); ++k) {
                std::uint32_t bits = 0;
                for (int i = 0; i < 4; ++i)
                    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[4 * k + i])) << (8 * i);
                std::memcpy(&t.f32[k], &bits, 4);
            }
        } else {
            t.u8.assign(reinterpret_cast<const std::uint8_t*>(src),
                        reinterpret_cast<const std::uint8_t*>(src) + t.numel());
        }
        out.emplace(name, std::move(t));
    }
    if (metadata && !header.contains("__metadata__")) *metadata = nlohmann::json::object();
    return out;
}

void save_tensors(const fs::path& path, const TensorMap& tensors, const nlohmann::json& metadata) {
    write_atomic(path, encode_tensors(tensors, metadata));
}

TensorMap load_tensors(const fs::path& path, nlohmann::json* metadata) {
    return decode_tensors(read_file(path), metadata);
}

Tensor orbit_to_u8(const ViewStack& seq) {
    Tensor t;
    t.dtype = Tensor::DType::u8;
    t.shape = {seq.views(), seq.resolution(), seq.resolution(), seq.channels()};
    t.u8.resize(seq.size());
    auto v = seq.values();
    for (std::size_t k = 0; k < v.size(); ++k)
        t.u8[k] = static_cast<std::uint8_t>(std::lround(std::clamp(v[k], 0.0f, 1.0f) * 255.0f));
    return t;
}

ViewStack orbit_from_u8(const Tensor& t) {
    if (t.dtype != Tensor::DType::u8 || t.shape.size() != 4 || t.shape[1] != t.shape[2])
        throw DataError("orbit tensor must be U8 with shape [N, R, R, C]");
    ViewStack seq(static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), static_cast<int>(t.shape[3]));
    auto v = seq.values();
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<float>(t.u8[k]) / 255.0f;
    return seq;
}

void write_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + tmp.string() + "' for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        f.flush();
        if (!f) throw IoError("write to '" + tmp.string() + "' failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw IoError("rename to '" + path.string() + "' failed: " + ec.message());
    }
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_atomic(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

std::string encode_strip(const ViewStack& seq) {
    const int R = seq.resolution(), C = seq.channels(), N = seq.views();
    std::string out = (C == 3 ? "P6\n" : "P5\n") + std::to_string(R * N) + " " + std::to_string(R) + "\n255\n";
    for (int row = 0; row < R; ++row)
        for (int i = 0; i < N; ++i) {
            auto v = seq.view(i);
            for (int col = 0; col < R; ++col)
                for (int ch = 0; ch < C; ++ch) {
                    const float x = std::clamp(v[(static_cast<std::size_t>(row) * R + col) * C + ch], 0.0f, 1.0f);
                    out.push_back(static_cast<char>(std::lround(x * 255.0f)));
                }
        }
    return out;
}

void write_strip(const fs::path& path, const ViewStack& seq) { write_atomic(path, encode_strip(seq)); }

DirLock::DirLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
        throw IoError("output directory '" + dir.string() + "' is locked by another run (remove " +
                      path_.string() + " if stale)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

DirLock::~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

}  // namespace orbitedit::io
