#include "uvdiff/ndt_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace uvdiff {

namespace {

static_assert(std::endian::native == std::endian::little,
              "NDT1 I/O is implemented for little-endian hosts only");

template <class U>
void write_raw(std::ostream& os, const U& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U read_raw(std::istream& is) {
    U v;
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is) fail_state("NDT1: truncated stream");
    return v;
}

template <class T> constexpr std::uint8_t dtype_code();
template <> constexpr std::uint8_t dtype_code<float>() { return 0; }
template <> constexpr std::uint8_t dtype_code<double>() { return 1; }

} // namespace

template <class T>
void write_ndt(std::ostream& os, const TensorT<T>& t) {
    require(t.defined(), "write_ndt: undefined tensor");
    require(t.rank() <= 255, "write_ndt: rank too large");
    os.write("NDT1", 4);
    write_raw<std::uint8_t>(os, dtype_code<T>());
    write_raw<std::uint8_t>(os, std::uint8_t(t.rank()));
    for (std::size_t e : t.shape()) {
        require(e <= 0xffffffffull, "write_ndt: extent exceeds u32");
        write_raw<std::uint32_t>(os, std::uint32_t(e));
    }
    os.write(reinterpret_cast<const char*>(t.data()),
             std::streamsize(t.size() * sizeof(T)));
    if (!os) fail_state("write_ndt: stream write failed");
}

template <class T>
TensorT<T> read_ndt(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "NDT1", 4) != 0)
        fail_state("read_ndt: bad magic (not an NDT1 stream)");
    const auto dtype = read_raw<std::uint8_t>(is);
    if (dtype != dtype_code<T>())
        fail_state("read_ndt: dtype code " + std::to_string(int(dtype)) +
                   " does not match requested element type");
    const auto rank = read_raw<std::uint8_t>(is);
    Shape shape(rank);
    for (auto& e : shape) e = read_raw<std::uint32_t>(is);
    std::vector<T> data(numel(shape));
    is.read(reinterpret_cast<char*>(data.data()),
            std::streamsize(data.size() * sizeof(T)));
    if (!is) fail_state("read_ndt: truncated tensor data");
    return TensorT<T>::from_data(std::move(shape), std::move(data));
}

template <class T>
void write_ndt_file(const std::string& path, const TensorT<T>& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail_state("write_ndt_file: cannot open " + path);
    write_ndt(os, t);
}

template <class T>
TensorT<T> read_ndt_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail_state("read_ndt_file: cannot open " + path);
    return read_ndt<T>(is);
}

template void write_ndt(std::ostream&, const TensorT<float>&);
template void write_ndt(std::ostream&, const TensorT<double>&);
template TensorT<float> read_ndt(std::istream&);
template TensorT<double> read_ndt(std::istream&);
template void write_ndt_file(const std::string&, const TensorT<float>&);
template void write_ndt_file(const std::string&, const TensorT<double>&);
template TensorT<float> read_ndt_file(const std::string&);
template TensorT<double> read_ndt_file(const std::string&);

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) fail_state("write_checkpoint: cannot open " + path);
    os << "UVCKPT1\n";
    for (const auto& [k, v] : ckpt.meta) {
        require(k.find('=') == std::string::npos && k.find('\n') == std::string::npos,
                "write_checkpoint: bad meta key");
        require(v.find('\n') == std::string::npos, "write_checkpoint: bad meta value");
        os << k << "=" << v << "\n";
    }
    os << "\n";
    write_raw<std::uint32_t>(os, std::uint32_t(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        require(name.size() <= 0xffff, "write_checkpoint: name too long");
        write_raw<std::uint16_t>(os, std::uint16_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        write_ndt(os, t);
    }
    if (!os) fail_state("write_checkpoint: stream write failed");
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) fail_state("read_checkpoint: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "UVCKPT1")
        fail_state("read_checkpoint: " + path + " is not a UVCKPT1 file");
    Checkpoint ckpt;
    while (std::getline(is, line) && !line.empty()) {
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            fail_state("read_checkpoint: malformed meta line '" + line + "'");
        ckpt.meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const auto count = read_raw<std::uint32_t>(is);
    ckpt.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = read_raw<std::uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) fail_state("read_checkpoint: truncated tensor name");
        ckpt.tensors.emplace_back(std::move(name), read_ndt<float>(is));
    }
    return ckpt;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace uvdiff
