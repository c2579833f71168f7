#pragma once

// Binary tensor container. Layout (all integers little-endian):
//   magic "HTOK" | u32 version | u32 tensor count |
//   per tensor: u32 name_len | name bytes | u8 dtype | u8 rank | u32 dims[rank] | payload
// dtype codes: 0 = f32, 1 = f64, 2 = u8. Round trips are bit-exact.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "holitok/tensor.hpp"

namespace holitok {

constexpr uint32_t kCheckpointVersion = 1;

struct TensorBlob {
    uint8_t dtype = 0;
    std::vector<uint32_t> dims;
    std::vector<uint8_t> bytes;

    int64_t numel() const {
        int64_t n = 1;
        for (uint32_t d : dims) n *= d;
        return n;
    }
};

using BlobMap = std::map<std::string, TensorBlob>;

void save_blobs(const std::string& path, const BlobMap& blobs);
BlobMap load_blobs(const std::string& path);

template <typename S>
uint8_t dtype_code();
template <> inline uint8_t dtype_code<float>() { return 0; }
template <> inline uint8_t dtype_code<double>() { return 1; }

template <typename S>
TensorBlob to_blob(const Tensor<S>& t) {
    TensorBlob b;
    b.dtype = dtype_code<S>();
    for (int64_t d : t.shape()) b.dims.push_back(static_cast<uint32_t>(d));
    b.bytes.resize(t.numel() * sizeof(S));
    std::memcpy(b.bytes.data(), t.data(), b.bytes.size());
    return b;
}

template <typename S>
void blob_into(const TensorBlob& b, const std::string& name, Tensor<S>& t) {
    Shape want = t.shape();
    Shape got;
    for (uint32_t d : b.dims) got.push_back(d);
    if (got != want)
        fail("checkpoint shape mismatch for '" + name + "': file has " + shape_str(got) +
             ", model expects " + shape_str(want));
    if (b.dtype == dtype_code<S>()) {
        std::memcpy(t.data(), b.bytes.data(), b.bytes.size());
    } else if (b.dtype == 0) {
        const float* src = reinterpret_cast<const float*>(b.bytes.data());
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<S>(src[i]);
    } else if (b.dtype == 1) {
        const double* src = reinterpret_cast<const double*>(b.bytes.data());
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = static_cast<S>(src[i]);
    } else {
        fail("checkpoint dtype code " + std::to_string(b.dtype) + " for '" + name + "' is not loadable");
    }
}

// Saves a named parameter map (insertion into std::map keeps names sorted,
// so files are deterministic for identical parameter sets).
template <typename S>
void save_params(const std::string& path, const std::map<std::string, Tensor<S>>& params) {
    BlobMap blobs;
    for (const auto& [name, t] : params) blobs.emplace(name, to_blob(t));
    save_blobs(path, blobs);
}

template <typename S>
void load_params(const std::string& path, std::map<std::string, Tensor<S>>& params) {
    BlobMap blobs = load_blobs(path);
    for (auto& [name, t] : params) {
        auto it = blobs.find(name);
        if (it == blobs.end()) fail("checkpoint missing tensor '" + name + "'");
        blob_into(it->second, name, t);
    }
}

}  // namespace holitok
