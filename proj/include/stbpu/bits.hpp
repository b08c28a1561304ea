#pragma once

#include <bit>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace stbpu {

constexpr std::uint64_t kAddrMask48 = (std::uint64_t{1} << 48) - 1;

constexpr std::uint64_t low_mask(unsigned bits)
{
    return bits >= 64 ? ~std::uint64_t{0} : ((std::uint64_t{1} << bits) - 1);
}

constexpr std::uint64_t bit_slice(std::uint64_t v, unsigned lo, unsigned n)
{
    return (v >> lo) & low_mask(n);
}

// XOR-folds the low `in_bits` of v into `out_bits` by chunking.
constexpr std::uint64_t xor_fold(std::uint64_t v, unsigned in_bits, unsigned out_bits)
{
    if (out_bits == 0)
        return 0;
    v &= low_mask(in_bits);
    std::uint64_t r = 0;
    for (unsigned pos = 0; pos < in_bits; pos += out_bits)
        r ^= (v >> pos) & low_mask(out_bits);
    return r;
}

constexpr unsigned log2_exact(std::uint64_t v)
{
    return static_cast<unsigned>(std::countr_zero(v));
}

constexpr bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

/// Fixed-width bit vector of up to 128 bits. Bit 0 is the least significant.
class BitVec {
public:
    static constexpr unsigned kMaxWidth = 128;

    BitVec() = default;
    explicit BitVec(unsigned width) : width_(width) { check_width(width); }
    BitVec(unsigned width, std::uint64_t lo, std::uint64_t hi = 0) : width_(width), lo_(lo), hi_(hi)
    {
        check_width(width);
        trim();
    }

    unsigned width() const { return width_; }
    std::uint64_t lo() const { return lo_; }
    std::uint64_t hi() const { return hi_; }

    bool get(unsigned i) const { return i < 64 ? (lo_ >> i) & 1 : (hi_ >> (i - 64)) & 1; }

    void set(unsigned i, bool b)
    {
        std::uint64_t& w = i < 64 ? lo_ : hi_;
        const std::uint64_t m = std::uint64_t{1} << (i & 63);
        w = b ? (w | m) : (w & ~m);
    }

    void flip(unsigned i)
    {
        if (i < 64)
            lo_ ^= std::uint64_t{1} << i;
        else
            hi_ ^= std::uint64_t{1} << (i - 64);
    }

    // Reads n <= 64 bits starting at lo.
    std::uint64_t slice(unsigned lo, unsigned n) const
    {
        if (n == 0)
            return 0;
        std::uint64_t v;
        if (lo >= 64)
            v = hi_ >> (lo - 64);
        else if (lo == 0)
            v = lo_;
        else
            v = (lo_ >> lo) | (hi_ << (64 - lo));
        return v & low_mask(n);
    }

    // Writes the low n <= 64 bits of v starting at lo.
    void put(unsigned lo, unsigned n, std::uint64_t v)
    {
        for (unsigned i = 0; i < n; ++i)
            set(lo + i, (v >> i) & 1);
    }

    unsigned popcount() const { return std::popcount(lo_) + std::popcount(hi_); }

    BitVec operator^(const BitVec& o) const { return BitVec(width_, lo_ ^ o.lo_, hi_ ^ o.hi_); }
    bool operator==(const BitVec& o) const = default;

    /// Appends `o` above the current most significant bit.
    BitVec concat(const BitVec& o) const
    {
        BitVec r(width_ + o.width_, lo_, hi_);
        for (unsigned i = 0; i < o.width_; ++i)
            r.set(width_ + i, o.get(i));
        return r;
    }

    std::string to_hex() const;

private:
    static void check_width(unsigned w)
    {
        if (w > kMaxWidth)
            throw std::invalid_argument("BitVec width " + std::to_string(w) + " exceeds 128");
    }

    void trim()
    {
        if (width_ < 64) {
            lo_ &= low_mask(width_);
            hi_ = 0;
        } else if (width_ < 128) {
            hi_ &= low_mask(width_ - 64);
        }
    }

    unsigned width_ = 0;
    std::uint64_t lo_ = 0;
    std::uint64_t hi_ = 0;
};

/// Seeded generator with platform-independent bounded draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next() { return eng_(); }

    // Uniform in [0, n) by rejection; identical sequences on every platform.
    std::uint64_t below(std::uint64_t n)
    {
        if (n <= 1)
            return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do
            x = eng_();
        while (x >= limit);
        return x % n;
    }

    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    bool chance(double p) { return uniform() < p; }

    BitVec bits(unsigned width) { return BitVec(width, eng_(), eng_()); }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
};

template <typename Vec>
void shuffle(Vec& v, Rng& rng)
{
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.below(i)]);
}

// splitmix64 finaliser; derives independent per-item seeds.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace stbpu
