#pragma once

// Counter-based SplitMix64 streams.
//
// Every random quantity in the library is drawn from an Rng whose key is derived
// from (seed, stream ids...). Draw i of a stream is a pure function of (key, i),
// so substreams per time step, per site or per sample never depend on scheduling.

#include <cstdint>
#include <initializer_list>
#include <span>

namespace cxvae {

std::uint64_t mix64(std::uint64_t x) noexcept;

class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : key_(mix64(seed)), counter_(0) {}

    /// Independent child stream identified by `ids`; the parent is not advanced.
    [[nodiscard]] Rng substream(std::initializer_list<std::uint64_t> ids) const noexcept;

    std::uint64_t next_u64() noexcept { return at(counter_++); }
    /// Raw output at an absolute position, without touching the counter.
    [[nodiscard]] std::uint64_t at(std::uint64_t index) const noexcept;

    /// Uniform on the open interval (0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Standard normal via Box-Muller (consumes two raw draws).
    double normal() noexcept;
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) noexcept;

    void fill_normal(std::span<double> out) noexcept;

    [[nodiscard]] std::uint64_t key() const noexcept { return key_; }
    [[nodiscard]] std::uint64_t counter() const noexcept { return counter_; }
    void set_counter(std::uint64_t c) noexcept { counter_ = c; }

private:
    Rng(std::uint64_t key, std::uint64_t counter, int) noexcept : key_(key), counter_(counter) {}

    std::uint64_t key_;
    std::uint64_t counter_;
};

/// Fisher-Yates shuffle driven by an Rng (std::shuffle is not portable bit-for-bit).
template <typename T>
void shuffle(std::span<T> items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(items[i - 1], items[j]);
    }
}

}  // namespace cxvae
