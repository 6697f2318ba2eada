#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace symunet {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& msg) : std::runtime_error("training error: " + msg) {}
};

inline void check_config(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

inline void check_dims(bool ok, const std::string& msg) {
    if (!ok) throw DimensionError(msg);
}

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Per-sample seed for parallel-safe dataset generation: identical whether
// samples are produced serially or concurrently.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t index) {
    return splitmix64(global_seed + 0x9E3779B97F4A7C15ULL * (index + 1));
}

inline std::uint64_t hash_name(const std::string& name) {
    std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

// Deterministic RNG with hand-rolled distributions so streams are identical
// across standard-library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) { return eng_() % n; }

    double uniform_range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    bool coin() { return (eng_() & 1ULL) != 0; }

    std::string serialize() const {
        std::ostringstream os;
        os << eng_ << " " << (have_spare_ ? 1 : 0) << " " << spare_hex();
        return os.str();
    }

    void deserialize(const std::string& text) {
        std::istringstream is(text);
        is >> eng_;
        int flag = 0;
        std::string hex;
        is >> flag >> hex;
        if (!is) throw FormatError("bad rng state string");
        have_spare_ = (flag != 0);
        std::uint64_t bits = std::stoull(hex, nullptr, 16);
        std::memcpy(&spare_, &bits, sizeof(spare_));
    }

private:
    std::string spare_hex() const {
        std::uint64_t bits;
        std::memcpy(&bits, &spare_, sizeof(bits));
        std::ostringstream os;
        os << std::hex << bits;
        return os.str();
    }

    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

template <typename T>
inline bool all_finite(const std::vector<T>& v) {
    for (T x : v)
        if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
}

}  // namespace symunet
