#pragma once

#include <cmath>
#include <string_view>

#include "stgcl/common.hpp"

// Counter-based splittable PRNG. A Key is derived by folding tags into a
// 64-bit state; a Stream generates values from (key, counter) pairs, so
// draws depend only on the key and the draw index, never on global state.
// This is what makes per-instance augmentation order-independent.

namespace stgcl::rng {

inline u64 splitmix64(u64 x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class Key {
public:
    Key() : state_(0) {}
    explicit Key(u64 seed) : state_(splitmix64(seed ^ 0x5bf0f3a6bb1a2c4dULL)) {}

    Key fold(u64 tag) const {
        Key k;
        k.state_ = splitmix64(state_ ^ splitmix64(tag));
        return k;
    }
    Key fold(std::string_view name) const { return fold(hash_name(name)); }

    u64 state() const { return state_; }

private:
    u64 state_;
};

class Stream {
public:
    explicit Stream(Key key) : key_(key.state()), counter_(0) {}

    u64 next_u64() { return splitmix64(key_ ^ splitmix64(counter_++)); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

    // Box-Muller; the paired value is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_unit();
        double u2 = next_unit();
        while (u1 <= 0.0) u1 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Unbiased integer in [0, n) by rejection.
    u64 below(u64 n) {
        if (n == 0) return 0;
        const u64 limit = (~u64{0}) - ((~u64{0}) % n);
        u64 x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

private:
    u64 key_;
    u64 counter_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

template <typename T>
void shuffle(std::vector<T>& items, Stream& stream) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(stream.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace stgcl::rng
