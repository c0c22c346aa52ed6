#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace lpbnn {

// Counter-based pseudo-random stream. Each draw hashes (key, counter) with a
// splitmix64-style mixer, so a stream's output depends only on its key and how
// many values were drawn, never on global state or thread layout. Streams form
// a tree: substream(tag) derives an independent child key. All sampling sites
// in the artifact derive their stream from the experiment seed plus a
// site-specific tag, which makes every run bit-reproducible.
class RngStream {
  public:
    RngStream() : key_(0) {}
    explicit RngStream(std::uint64_t key) : key_(key) {}

    static std::uint64_t mix(std::uint64_t key, std::uint64_t ctr) {
        std::uint64_t z = key + 0x9E3779B97F4A7C15ull * (ctr + 1);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Independent child stream; counter state of the parent is untouched.
    RngStream substream(std::uint64_t tag) const { return RngStream(mix(key_, mix(tag, 0x5851F42D4C957F2Dull))); }
    RngStream substream(std::string_view name) const { return substream(fnv1a(name)); }
    RngStream substream(std::string_view name, std::uint64_t index) const {
        return substream(name).substream(index ^ 0xA24BAED4963EE407ull);
    }

    std::uint64_t next_u64() { return mix(key_, counter_++); }

    // Uniform on (0,1), never exactly 0 or 1.
    double next_uniform() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

    // Standard normal via Box-Muller; consumes two uniforms per draw.
    double next_normal() {
        double u1 = next_uniform();
        double u2 = next_uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    std::uint64_t key() const { return key_; }

  private:
    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xCBF29CE484222325ull;
        for (char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ull;
        }
        return h;
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace lpbnn
