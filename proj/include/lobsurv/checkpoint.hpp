#pragma once

// Named parameter arrays plus the flat binary checkpoint container. Records
// are magic "LOBSRV01", then for each tensor: u64 name length, UTF-8 name,
// u64 rank, u64 dims, float64 payload, all little-endian.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lobsurv/tensor.hpp"

namespace lobsurv {

struct Param {
    Shape shape;
    std::vector<double> value;
};

class ParamStore {
public:
    void add(const std::string& name, Shape shape, std::vector<double> value) {
        if (value.size() != numel(shape))
            throw ShapeError("param '" + name + "': size mismatch");
        if (params_.count(name)) throw std::invalid_argument("duplicate param: " + name);
        params_[name] = Param{std::move(shape), std::move(value)};
    }

    Param& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::out_of_range("unknown param: " + name);
        return it->second;
    }
    const Param& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::out_of_range("unknown param: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    const std::map<std::string, Param>& all() const { return params_; }
    std::map<std::string, Param>& all() { return params_; }
    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& [k, p] : params_) n += p.value.size();
        return n;
    }

private:
    std::map<std::string, Param> params_;
};

namespace detail {

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated integer");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f64(std::ostream& os, const double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &data[i], 8);
        write_u64(os, bits);
    }
}

inline void read_f64(std::istream& is, double* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits = read_u64(is);
        std::memcpy(&data[i], &bits, 8);
    }
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "LOBSRV01";

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write(kCheckpointMagic, 8);
    for (const auto& [name, p] : store.all()) {
        detail::write_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u64(os, p.shape.size());
        for (auto d : p.shape) detail::write_u64(os, d);
        detail::write_f64(os, p.value.data(), p.value.size());
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

inline ParamStore load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    ParamStore store;
    while (true) {
        is.peek();
        if (is.eof()) break;
        std::uint64_t name_len = detail::read_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        std::uint64_t rank = detail::read_u64(is);
        Shape shape(rank);
        for (auto& d : shape) d = detail::read_u64(is);
        std::vector<double> value(numel(shape));
        detail::read_f64(is, value.data(), value.size());
        if (!is) throw std::runtime_error("checkpoint: truncated record in " + path);
        store.add(name, std::move(shape), std::move(value));
    }
    return store;
}

// ----------------------------- tape binding -----------------------------

// Copies every parameter onto a tape as a differentiable leaf; after
// backward() the per-parameter gradients are read back through the handles.
struct BoundParams {
    std::map<std::string, Tensor> handles;

    Tensor at(const std::string& name) const {
        auto it = handles.find(name);
        if (it == handles.end()) throw std::out_of_range("unbound param: " + name);
        return it->second;
    }
};

inline BoundParams bind_params(Tape& tape, const ParamStore& store, bool requires_grad = true) {
    BoundParams bp;
    for (const auto& [name, p] : store.all())
        bp.handles[name] = tape.input(p.shape, p.value, requires_grad);
    return bp;
}

// ----------------------------- initializers -----------------------------

inline std::vector<double> xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t n,
                                          std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> out(n);
    for (auto& v : out) v = u(rng);
    return out;
}

inline std::vector<double> normal_init(std::size_t n, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, stddev);
    std::vector<double> out(n);
    for (auto& v : out) v = g(rng);
    return out;
}

}  // namespace lobsurv
