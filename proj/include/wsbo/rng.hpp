#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

namespace wsbo {

/// Derives an independent stream seed from a root seed and a stream name.
/// Streams are what let one `--seed` flag drive every component without the
/// draws of one component perturbing another.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
    // FNV-1a over the stream name, then a splitmix64 finalizer mixing in the seed.
    std::uint64_t h = 14695981039346656037ULL;
    for (char c : stream) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 1099511628211ULL;
    }
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL + h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index) {
    return derive_seed(derive_seed(seed, stream), std::to_string(index));
}

/// Seeded deterministic generator used everywhere randomness is needed.
///
/// The engine is std::mt19937_64, whose output sequence is pinned by the
/// standard, and doubles/Gaussians are produced from raw 64-bit draws rather
/// than through std::*_distribution, so batches are bit-reproducible across
/// platforms and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0,1) with 53 random mantissa bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller (caches the spare draw).
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform index in [0, n). Lemire multiply-shift; bias is < 2^-64.
    std::size_t next_index(std::size_t n) {
        const auto x = static_cast<unsigned __int128>(next_u64());
        return static_cast<std::size_t>((x * n) >> 64);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[next_index(i)]);
        }
    }

    /// k distinct indices drawn from [0, n) without replacement, k <= n.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(idx[i], idx[i + next_index(n - i)]);
        }
        idx.resize(k);
        return idx;
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace wsbo
