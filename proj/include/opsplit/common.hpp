#pragma once

// Shared error types, deterministic RNG, interval arithmetic and checksums.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

namespace opsplit {

// Maps to CLI exit code 2.
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Maps to CLI exit code 3.
struct NetworkError : std::runtime_error {
    explicit NetworkError(const std::string& msg) : std::runtime_error(msg) {}
};

// Maps to CLI exit code 4.
struct InvariantError : std::runtime_error {
    explicit InvariantError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InputError(msg);
}

inline void invariant(bool cond, const std::string& msg) {
    if (!cond) throw InvariantError(msg);
}

// mt19937_64 with hand-rolled distributions so that streams are identical
// across standard libraries (std::uniform_* are implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(split_mix(seed)) {}

    uint64_t next_u64() {
        // xorshift* keeps the generator tiny and byte-stable.
        uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1Dull;
    }

    // Uniform in [0, 1).
    double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (lo >= hi) return lo;
        uint64_t span = uint64_t(hi - lo) + 1;
        return lo + int64_t(next_u64() % span);
    }

    // Box-Muller; deterministic across platforms with the same libm.
    double gaussian() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    static uint64_t split_mix(uint64_t x) {
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        x = x ^ (x >> 31);
        return x ? x : 0x1234567898765432ull;
    }
    uint64_t state_;
};

// Half-open time interval [a, b).
struct Interval {
    double a = 0.0;
    double b = 0.0;
    double length() const { return b - a; }
};

// Sorts and merges overlapping intervals.
inline std::vector<Interval> merge_intervals(std::vector<Interval> v) {
    std::sort(v.begin(), v.end(), [](const Interval& x, const Interval& y) {
        return x.a < y.a || (x.a == y.a && x.b < y.b);
    });
    std::vector<Interval> out;
    for (const Interval& iv : v) {
        if (iv.b <= iv.a) continue;
        if (!out.empty() && iv.a <= out.back().b)
            out.back().b = std::max(out.back().b, iv.b);
        else
            out.push_back(iv);
    }
    return out;
}

inline double total_length(const std::vector<Interval>& merged) {
    double s = 0.0;
    for (const Interval& iv : merged) s += iv.length();
    return s;
}

// Total length of the intersection of two merged interval lists.
inline double intersection_length(const std::vector<Interval>& a,
                                  const std::vector<Interval>& b) {
    double s = 0.0;
    size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        double lo = std::max(a[i].a, b[j].a);
        double hi = std::min(a[i].b, b[j].b);
        if (hi > lo) s += hi - lo;
        if (a[i].b < b[j].b)
            ++i;
        else
            ++j;
    }
    return s;
}

inline uint32_t crc32_update(uint32_t crc, const void* data, size_t len) {
    return uint32_t(::crc32(crc, static_cast<const Bytef*>(data), uInt(len)));
}

inline uint32_t crc32_bytes(const void* data, size_t len) {
    return crc32_update(uint32_t(::crc32(0L, Z_NULL, 0)), data, len);
}

inline uint32_t crc32_str(const std::string& s) { return crc32_bytes(s.data(), s.size()); }

inline std::string format_hex32(uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

// Fixed-width scientific formatting used by the versioned text formats so
// emitted files are byte-stable for identical inputs.
inline std::string format_sci(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9e", v);
    return buf;
}

inline std::string format_fixed(double v, int digits = 9) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace opsplit
