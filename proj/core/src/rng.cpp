#include "cxvae/rng.hpp"

#include <cmath>
#include <numbers>

namespace cxvae {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Rng Rng::substream(std::initializer_list<std::uint64_t> ids) const noexcept {
    std::uint64_t k = key_;
    for (auto id : ids) {
        k = mix64(k ^ mix64(id + kGolden));
    }
    return Rng(k, 0, 0);
}

std::uint64_t Rng::at(std::uint64_t index) const noexcept {
    return mix64(key_ + (index + 1) * kGolden);
}

double Rng::uniform() noexcept {
    // (k + 0.5) / 2^53 is never 0 or 1.
    const std::uint64_t k = next_u64() >> 11;
    return (static_cast<double>(k) + 0.5) * 0x1.0p-53;
}

double Rng::normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<__uint128_t>(x) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

void Rng::fill_normal(std::span<double> out) noexcept {
    for (auto& v : out) v = normal();
}

}  // namespace cxvae
