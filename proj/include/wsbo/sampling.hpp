#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "wsbo/errors.hpp"
#include "wsbo/rng.hpp"

namespace wsbo {

enum class SampleMethod { Uniform, Latin, Halton };

inline const char* to_string(SampleMethod m) {
    switch (m) {
        case SampleMethod::Uniform: return "uniform";
        case SampleMethod::Latin: return "latin";
        case SampleMethod::Halton: return "halton";
    }
    return "?";
}

/// A batch of unit-cube points. For Halton batches `seed` holds the start
/// index of the sequence (there is no randomness to seed).
struct SampleBatch {
    std::vector<std::vector<double>> points;
    std::uint64_t seed = 0;
    SampleMethod method = SampleMethod::Uniform;
};

namespace detail {
inline constexpr std::array<int, 25> kHaltonBases = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
                                                     43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};

inline double radical_inverse(std::uint64_t index, int base) {
    double inv_base = 1.0 / base;
    double factor = inv_base;
    double value = 0.0;
    while (index > 0) {
        value += static_cast<double>(index % base) * factor;
        index /= base;
        factor *= inv_base;
    }
    return value;
}

inline void check_dk(std::size_t d, std::size_t k) {
    if (d == 0) throw DomainError("dimension count must be >= 1");
    if (k == 0) throw DomainError("sample count must be >= 1");
}
}  // namespace detail

/// k points i.i.d. uniform on [0,1)^d; same seed gives the identical batch.
inline SampleBatch uniform_sample(std::size_t d, std::size_t k, std::uint64_t seed) {
    detail::check_dk(d, k);
    Rng rng(seed);
    SampleBatch batch{{}, seed, SampleMethod::Uniform};
    batch.points.resize(k, std::vector<double>(d));
    for (auto& p : batch.points) {
        for (auto& x : p) x = rng.next_double();
    }
    return batch;
}

/// Latin hypercube: per dimension exactly one point per stratum
/// [(j-1)/k, j/k), strata assigned by an independent random permutation
/// per dimension, uniform offset within the stratum.
inline SampleBatch latin_hypercube(std::size_t d, std::size_t k, std::uint64_t seed) {
    detail::check_dk(d, k);
    Rng rng(seed);
    SampleBatch batch{{}, seed, SampleMethod::Latin};
    batch.points.resize(k, std::vector<double>(d));
    std::vector<std::size_t> strata(k);
    for (std::size_t dim = 0; dim < d; ++dim) {
        for (std::size_t j = 0; j < k; ++j) strata[j] = j;
        rng.shuffle(strata);
        for (std::size_t j = 0; j < k; ++j) {
            batch.points[j][dim] = (static_cast<double>(strata[j]) + rng.next_double()) / static_cast<double>(k);
        }
    }
    return batch;
}

/// Plain (unscrambled) Halton points: point j has coordinate i equal to
/// the radical inverse of start_index + j - 1 in the i-th prime base.
/// Starts at index 1 by convention, skipping the all-zeros point.
inline SampleBatch halton(std::size_t d, std::size_t k, std::uint64_t start_index = 1) {
    detail::check_dk(d, k);
    if (d > detail::kHaltonBases.size()) {
        throw DomainError("halton supports at most " + std::to_string(detail::kHaltonBases.size()) +
                          " dimensions, got " + std::to_string(d));
    }
    if (start_index < 1) throw DomainError("halton start index must be >= 1");
    SampleBatch batch{{}, start_index, SampleMethod::Halton};
    batch.points.resize(k, std::vector<double>(d));
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t i = 0; i < d; ++i) {
            batch.points[j][i] = detail::radical_inverse(start_index + j, detail::kHaltonBases[i]);
        }
    }
    return batch;
}

}  // namespace wsbo
