#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssdpose {

/// Dense row-major tensor. Plain value type; autodiff lives in autodiff.hpp.
template <typename S>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<S> data;

    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shp, S fill = S(0))
        : shape(std::move(shp)), data(static_cast<size_t>(numel_of(shape)), fill) {}

    Tensor(std::vector<int64_t> shp, std::vector<S> values)
        : shape(std::move(shp)), data(std::move(values)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape)) {
            throw std::invalid_argument("tensor: data length does not match shape");
        }
    }

    static int64_t numel_of(const std::vector<int64_t>& shp) {
        int64_t n = 1;
        for (int64_t d : shp) {
            if (d < 0) throw std::invalid_argument("tensor: negative dimension");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    S* ptr() { return data.data(); }
    const S* ptr() const { return data.data(); }

    S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    S operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 2-D accessors; most kernels index raw buffers directly.
    S& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    S at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    template <typename T2>
    Tensor<T2> cast() const {
        Tensor<T2> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T2>(data[i]);
        return out;
    }

    static Tensor zeros(std::vector<int64_t> shp) { return Tensor(std::move(shp)); }

    static Tensor full(std::vector<int64_t> shp, S v) { return Tensor(std::move(shp), v); }

    static Tensor scalar(S v) { return Tensor({1}, std::vector<S>{v}); }
};

inline std::string shape_str(const std::vector<int64_t>& shp) {
    std::string s = "[";
    for (size_t i = 0; i < shp.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shp[i]);
    }
    return s + "]";
}

/// Raised when an op produces (or is given) NaN/Inf.
class NonFiniteError : public std::runtime_error {
public:
    explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

template <typename S>
bool all_finite(const S* p, int64_t n) {
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(p[i])) return false;
    }
    return true;
}

template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
    if (!all_finite(t.ptr(), t.numel())) {
        throw NonFiniteError(std::string(op) + ": produced non-finite values");
    }
}

// ---------------------------------------------------------------------------
// Deterministic RNG: xoshiro256** seeded through splitmix64. Independent of
// libstdc++ distribution internals so frozen test values stay valid.
// ---------------------------------------------------------------------------

struct Rng {
    uint64_t s[4];

    static uint64_t splitmix64(uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    explicit Rng(uint64_t seed = 0) {
        uint64_t x = seed;
        for (auto& v : s) v = splitmix64(x);
    }

    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    uint64_t next_u64() {
        const uint64_t result = rotl(s[1] * 5, 7) * 9;
        const uint64_t t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = rotl(s[3], 45);
        return result;
    }

    /// Sub-generator for stream `id`; independent of draws taken from *this.
    Rng split(uint64_t id) const {
        uint64_t x = s[0] ^ (id * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
        Rng r(0);
        for (auto& v : r.s) v = splitmix64(x);
        return r;
    }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    double normal() {
        // Box-Muller; one value per call so call sequences stay reproducible.
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    int64_t uniform_int(int64_t n) {  // [0, n)
        return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
    }

    template <typename S>
    void fill_uniform(Tensor<S>& t, double a, double b) {
        for (auto& v : t.data) v = static_cast<S>(uniform(a, b));
    }

    template <typename S>
    void fill_normal(Tensor<S>& t, double stddev = 1.0) {
        for (auto& v : t.data) v = static_cast<S>(stddev * normal());
    }
};

}  // namespace ssdpose
