#pragma once

#include <cstdint>

namespace picodiff {

// Counter-based PRNG (Philox4x32-10, Salmon et al. 2011).
//
// State is (key, counter); the generator is a pure function of both, so any
// (seed, stream) pair names a reproducible random sequence without shared
// state. Seeding convention used throughout the project:
//   key     = (lo32(seed), hi32(seed))
//   counter = (block_index_lo, block_index_hi, lo32(stream), hi32(stream))
// Every dataset record, training step and eval record derives its own stream,
// which makes generation order-independent and bit-reproducible.
class Philox {
public:
    Philox() : Philox(0, 0) {}
    Philox(uint64_t seed, uint64_t stream);

    uint32_t next_u32();
    uint64_t next_u64();

    // Uniform in [0, 1).
    float uniform();
    double uniform_f64();

    // Uniform integer in [0, n), n >= 1. Unbiased via rejection.
    uint32_t uniform_int(uint32_t n);

    // Standard normal via Box-Muller (caches the second variate).
    float normal();

    bool bernoulli(double p);

private:
    void refill();

    uint32_t key_[2];
    uint32_t ctr_[4];
    uint32_t buf_[4];
    int buf_pos_;
    bool have_spare_normal_;
    float spare_normal_;
};

// Well-known stream namespaces so independent subsystems never collide on
// the same (seed, stream) pair.
namespace streams {
constexpr uint64_t kDatasetRecord = 0x0100000000000000ull;  // + record index
constexpr uint64_t kTrainStep     = 0x0200000000000000ull;  // + step
constexpr uint64_t kEvalRecord    = 0x0300000000000000ull;  // + record id
constexpr uint64_t kWeightInit    = 0x0400000000000000ull;  // + parameter ordinal
constexpr uint64_t kEncoder       = 0x0500000000000000ull;  // + layer ordinal
constexpr uint64_t kSampler       = 0x0600000000000000ull;  // + image id
}  // namespace streams

}  // namespace picodiff
