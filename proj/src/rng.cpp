#include "picodiff/rng.hpp"

#include <cmath>

namespace picodiff {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline uint32_t mulhi(uint32_t a, uint32_t b) {
    return static_cast<uint32_t>((static_cast<uint64_t>(a) * b) >> 32);
}

inline void philox_round(uint32_t ctr[4], const uint32_t key[2]) {
    uint32_t hi0 = mulhi(kPhiloxM0, ctr[0]);
    uint32_t lo0 = kPhiloxM0 * ctr[0];
    uint32_t hi1 = mulhi(kPhiloxM1, ctr[2]);
    uint32_t lo1 = kPhiloxM1 * ctr[2];
    uint32_t out[4];
    out[0] = hi1 ^ ctr[1] ^ key[0];
    out[1] = lo1;
    out[2] = hi0 ^ ctr[3] ^ key[1];
    out[3] = lo0;
    ctr[0] = out[0];
    ctr[1] = out[1];
    ctr[2] = out[2];
    ctr[3] = out[3];
}

}  // namespace

Philox::Philox(uint64_t seed, uint64_t stream) {
    key_[0] = static_cast<uint32_t>(seed);
    key_[1] = static_cast<uint32_t>(seed >> 32);
    ctr_[0] = 0;
    ctr_[1] = 0;
    ctr_[2] = static_cast<uint32_t>(stream);
    ctr_[3] = static_cast<uint32_t>(stream >> 32);
    buf_pos_ = 4;
    have_spare_normal_ = false;
    spare_normal_ = 0.0f;
}

void Philox::refill() {
    uint32_t ctr[4] = {ctr_[0], ctr_[1], ctr_[2], ctr_[3]};
    uint32_t key[2] = {key_[0], key_[1]};
    for (int round = 0; round < 10; ++round) {
        philox_round(ctr, key);
        key[0] += kPhiloxW0;
        key[1] += kPhiloxW1;
    }
    buf_[0] = ctr[0];
    buf_[1] = ctr[1];
    buf_[2] = ctr[2];
    buf_[3] = ctr[3];
    buf_pos_ = 0;
    // 64-bit block index in ctr_[0..1]; streams live in ctr_[2..3].
    if (++ctr_[0] == 0) ++ctr_[1];
}

uint32_t Philox::next_u32() {
    if (buf_pos_ >= 4) refill();
    return buf_[buf_pos_++];
}

uint64_t Philox::next_u64() {
    uint64_t lo = next_u32();
    uint64_t hi = next_u32();
    return lo | (hi << 32);
}

float Philox::uniform() {
    // 24 significant bits so the result is exact in f32 and < 1.
    return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f);
}

double Philox::uniform_f64() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

uint32_t Philox::uniform_int(uint32_t n) {
    if (n <= 1) return 0;
    uint32_t limit = 0xFFFFFFFFu - (0xFFFFFFFFu % n);
    uint32_t v = next_u32();
    while (v >= limit) v = next_u32();
    return v % n;
}

float Philox::normal() {
    if (have_spare_normal_) {
        have_spare_normal_ = false;
        return spare_normal_;
    }
    // Box-Muller; u1 is kept away from zero so log() stays finite.
    double u1 = (static_cast<double>(next_u32()) + 1.0) * (1.0 / 4294967296.0);
    double u2 = static_cast<double>(next_u32()) * (1.0 / 4294967296.0);
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_normal_ = static_cast<float>(r * std::sin(theta));
    have_spare_normal_ = true;
    return static_cast<float>(r * std::cos(theta));
}

bool Philox::bernoulli(double p) {
    return uniform_f64() < p;
}

}  // namespace picodiff
