#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "uvdiff/tensor.hpp"

namespace uvdiff {

// NDT1 tensor container: magic "NDT1", u8 dtype (0 = f32, 1 = f64), u8 rank,
// rank x u32 little-endian extents, then raw little-endian element data.
// Big-endian hosts are not supported (the loaders check and refuse).

template <class T> void write_ndt(std::ostream& os, const TensorT<T>& t);
template <class T> TensorT<T> read_ndt(std::istream& is);

template <class T> void write_ndt_file(const std::string& path, const TensorT<T>& t);
template <class T> TensorT<T> read_ndt_file(const std::string& path);

// Model checkpoint: text line "UVCKPT1", then "key=value" lines, a blank
// line, u32 tensor count, and per tensor a u16 name length, the name bytes
// and an NDT1 blob. Weights only; optimizer state is not persisted, so
// resumed training restarts its Adam moments.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// FNV-1a over raw tensor bytes; used to fingerprint inputs in reports and to
// assert bit-reproducibility in tests.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 0xcbf29ce484222325ull);
template <class T> std::uint64_t tensor_hash(const TensorT<T>& t) {
    return fnv1a(t.data(), t.size() * sizeof(T));
}

} // namespace uvdiff
