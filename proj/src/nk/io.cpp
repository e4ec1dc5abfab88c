#include "nk/io.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace nk {

void write_tensor(const std::string& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    const uint32_t rank = static_cast<uint32_t>(t.rank());
    f.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int i = 0; i < t.rank(); ++i) {
        const uint32_t e = static_cast<uint32_t>(t.extent(i));
        f.write(reinterpret_cast<const char*>(&e), sizeof(e));
    }
    f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f) throw std::runtime_error("write failed: " + path);
}

Tensor read_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    uint32_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    if (!f || rank > 16) throw std::runtime_error("corrupt tensor file: " + path);
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t e = 0;
        f.read(reinterpret_cast<char*>(&e), sizeof(e));
        if (!f || e == 0) throw std::runtime_error("corrupt tensor file: " + path);
        shape[i] = static_cast<int>(e);
    }
    Tensor t(shape);
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!f || f.gcount() != static_cast<std::streamsize>(t.size() * sizeof(double))) {
        throw std::runtime_error("corrupt tensor file (truncated): " + path);
    }
    return t;
}

}  // namespace nk
