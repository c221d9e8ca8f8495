#pragma once

// Dense arithmetic, stable activations, batch statistics and the seeded PRNG
// shared by every other module.
//
// Summation order is fixed: every reduction runs sequentially, left to right,
// over ascending indices. Results are therefore bit-reproducible for a fixed
// build, and the sparse helpers below (which skip exact zeros) produce the
// same bits as their dense counterparts.

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apr/error.hpp"

namespace apr {

template <std::floating_point T>
using BasicVector = std::vector<T>;
using Vector = BasicVector<double>;

/// Row-major dense matrix.
template <std::floating_point T>
class BasicMatrix {
  public:
    BasicMatrix() = default;
    BasicMatrix(std::size_t rows, std::size_t cols, T fill = T(0))
        : m_rows(rows), m_cols(cols), m_data(rows * cols, fill)
    {}

    template <std::floating_point U>
    explicit BasicMatrix(const BasicMatrix<U>& other)
        : m_rows(other.rows()), m_cols(other.cols()), m_data(other.data().begin(), other.data().end())
    {}

    static BasicMatrix identity(std::size_t n)
    {
        BasicMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            m(i, i) = T(1);
        }
        return m;
    }

    [[nodiscard]] std::size_t rows() const noexcept { return m_rows; }
    [[nodiscard]] std::size_t cols() const noexcept { return m_cols; }
    [[nodiscard]] std::size_t size() const noexcept { return m_data.size(); }

    T& operator()(std::size_t r, std::size_t c) noexcept { return m_data[r * m_cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const noexcept { return m_data[r * m_cols + c]; }

    [[nodiscard]] std::span<T> row(std::size_t r) noexcept { return {m_data.data() + r * m_cols, m_cols}; }
    [[nodiscard]] std::span<const T> row(std::size_t r) const noexcept
    {
        return {m_data.data() + r * m_cols, m_cols};
    }

    [[nodiscard]] std::vector<T>& data() noexcept { return m_data; }
    [[nodiscard]] const std::vector<T>& data() const noexcept { return m_data; }

    void fill(T value) { std::fill(m_data.begin(), m_data.end(), value); }

    bool operator==(const BasicMatrix&) const = default;

  private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<T> m_data;
};

using Matrix = BasicMatrix<double>;

inline void require_same_length(std::size_t a, std::size_t b, std::string_view what)
{
    if (a != b) {
        throw Error(ErrorKind::DimensionMismatch,
                    std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b));
    }
}

template <std::floating_point T>
[[nodiscard]] T dot(std::span<const T> a, std::span<const T> b)
{
    require_same_length(a.size(), b.size(), "dot");
    T acc = T(0);
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

template <std::floating_point T>
[[nodiscard]] T dot(const BasicVector<T>& a, const BasicVector<T>& b)
{
    return dot(std::span<const T>(a), std::span<const T>(b));
}

template <std::floating_point T>
[[nodiscard]] T squared_norm(std::span<const T> v)
{
    T acc = T(0);
    for (T x : v) {
        acc += x * x;
    }
    return acc;
}

template <std::floating_point T>
[[nodiscard]] T l2_norm(std::span<const T> v)
{
    return std::sqrt(squared_norm(v));
}

inline constexpr double kZeroNormThreshold = 1e-30;

/// Unit-norm copy of `v`. Throws ZeroVector when the norm is below 1e-30.
template <std::floating_point T>
[[nodiscard]] BasicVector<T> l2_normalize(std::span<const T> v)
{
    const T norm = l2_norm(v);
    if (!(norm >= T(kZeroNormThreshold))) {
        throw Error(ErrorKind::ZeroVector, "cannot normalize a vector with norm below 1e-30");
    }
    BasicVector<T> out(v.begin(), v.end());
    for (T& x : out) {
        x /= norm;
    }
    return out;
}

template <std::floating_point T>
[[nodiscard]] BasicVector<T> l2_normalize(const BasicVector<T>& v)
{
    return l2_normalize(std::span<const T>(v));
}

template <std::floating_point T>
[[nodiscard]] BasicVector<T> matvec(const BasicMatrix<T>& m, std::span<const T> v)
{
    require_same_length(m.cols(), v.size(), "matvec");
    BasicVector<T> out(m.rows());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        out[r] = dot(m.row(r), v);
    }
    return out;
}

template <std::floating_point T>
[[nodiscard]] BasicVector<T> matvec(const BasicMatrix<T>& m, const BasicVector<T>& v)
{
    return matvec(m, std::span<const T>(v));
}

/// mᵀ v
template <std::floating_point T>
[[nodiscard]] BasicVector<T> matvec_transposed(const BasicMatrix<T>& m, std::span<const T> v)
{
    require_same_length(m.rows(), v.size(), "matvec_transposed");
    BasicVector<T> out(m.cols(), T(0));
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            out[c] += row[c] * v[r];
        }
    }
    return out;
}

/// m += scale · (u ⊗ v)
template <std::floating_point T>
void add_outer(BasicMatrix<T>& m, std::span<const T> u, std::span<const T> v, T scale = T(1))
{
    require_same_length(m.rows(), u.size(), "add_outer rows");
    require_same_length(m.cols(), v.size(), "add_outer cols");
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const T ur = scale * u[r];
        auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            row[c] += ur * v[c];
        }
    }
}

template <std::floating_point T>
void axpy(T alpha, std::span<const T> x, std::span<T> y)
{
    require_same_length(x.size(), y.size(), "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] += alpha * x[i];
    }
}

template <std::floating_point T>
[[nodiscard]] T mean(std::span<const T> xs)
{
    if (xs.empty()) {
        throw Error(ErrorKind::EmptyBatch, "mean of an empty batch");
    }
    T acc = T(0);
    for (T x : xs) {
        acc += x;
    }
    return acc / static_cast<T>(xs.size());
}

/// Standard deviation with the population divisor (count, not count - 1),
/// so a singleton batch is well defined and yields 0.
template <std::floating_point T>
[[nodiscard]] T population_std(std::span<const T> xs)
{
    const T mu = mean(xs);
    T acc = T(0);
    for (T x : xs) {
        acc += (x - mu) * (x - mu);
    }
    return std::sqrt(acc / static_cast<T>(xs.size()));
}

template <std::floating_point T>
[[nodiscard]] T population_std(const BasicVector<T>& xs)
{
    return population_std(std::span<const T>(xs));
}

/// Logistic function, evaluated on the branch where exp() cannot overflow.
template <std::floating_point T>
[[nodiscard]] T sigmoid(T x) noexcept
{
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <std::floating_point T>
[[nodiscard]] T tanh(T x) noexcept
{
    return std::tanh(x);
}

template <std::floating_point T>
[[nodiscard]] bool all_finite(std::span<const T> xs) noexcept
{
    for (T x : xs) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

namespace detail {

// exp(y) for y in [0, 40] written without branches or library calls so the
// scoring loop vectorizes. Cody-Waite reduction y = k ln2 + r, |r| <= ln2/2,
// then a degree-13 Taylor polynomial (truncation error below 2e-17).
inline double exp_reduced(double y) noexcept
{
    constexpr double log2e = 1.4426950408889634;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;
    constexpr double shifter = 6755399441055744.0;  // 1.5 * 2^52

    const double shifted = y * log2e + shifter;
    const double k = shifted - shifter;
    const double r = (y - k * ln2_hi) - k * ln2_lo;

    double p = 1.0 / 6227020800.0;
    p = p * r + 1.0 / 479001600.0;
    p = p * r + 1.0 / 39916800.0;
    p = p * r + 1.0 / 3628800.0;
    p = p * r + 1.0 / 362880.0;
    p = p * r + 1.0 / 40320.0;
    p = p * r + 1.0 / 5040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;

    // The low mantissa bits of `shifted` hold k as an integer.
    const std::uint64_t kbits = std::bit_cast<std::uint64_t>(shifted) & 0xfffULL;
    const double scale = std::bit_cast<double>((kbits + 1023ULL) << 52);
    return p * scale;
}

}  // namespace detail

/// Branch-free tanh for bulk scoring. Absolute error against std::tanh is
/// below 1e-15 over the whole real line (tested); saturates to ±1 beyond 20.
inline double tanh_fast(double x) noexcept
{
    const double ax = std::fabs(x);
    // Clamp on the bit pattern (same order as the value for non-negative
    // doubles); a floating-point select would keep the loop scalar.
    const double y = std::bit_cast<double>(std::min(std::bit_cast<std::uint64_t>(2.0 * ax), std::bit_cast<std::uint64_t>(40.0)));
    const double e = detail::exp_reduced(y);
    const double t = 1.0 - 2.0 / (e + 1.0);
    return std::copysign(t, x);
}

/// out[j] = tanh_fast(a[j] * b[j])
inline void tanh_products(const double* __restrict a, const double* __restrict b, double* __restrict out, std::size_t n) noexcept
{
    for (std::size_t j = 0; j < n; ++j) {
        out[j] = tanh_fast(a[j] * b[j]);
    }
}

/// 64-bit PRNG: xoshiro256** (Blackman & Vigna), state seeded through
/// SplitMix64. All derived distributions are implemented here rather than via
/// <random> so draws are identical across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : m_seed(seed)
    {
        std::uint64_t sm = seed;
        for (auto& word : m_state) {
            word = splitmix64(sm);
        }
    }

    [[nodiscard]] std::uint64_t seed() const noexcept { return m_seed; }

    std::uint64_t next_u64() noexcept
    {
        const std::uint64_t result = rotl(m_state[1] * 5, 7) * 9;
        const std::uint64_t t = m_state[1] << 17;
        m_state[2] ^= m_state[0];
        m_state[3] ^= m_state[1];
        m_state[1] ^= m_state[2];
        m_state[0] ^= m_state[3];
        m_state[2] ^= t;
        m_state[3] = rotl(m_state[3], 45);
        return result;
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), unbiased by rejection.
    std::uint64_t below(std::uint64_t n)
    {
        if (n == 0) {
            throw Error(ErrorKind::OutOfRange, "Rng::below(0)");
        }
        const std::uint64_t limit = (~std::uint64_t(0)) - ((~std::uint64_t(0)) % n);
        std::uint64_t x = next_u64();
        while (x >= limit) {
            x = next_u64();
        }
        return x % n;
    }

    /// Standard normal via Box-Muller (one value per call, the pair's second
    /// value is discarded to keep the call sequence simple).
    double normal() noexcept
    {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    /// Independent child generator for a named stream. Same parent seed and
    /// label always give the same child, regardless of how much the parent has
    /// been advanced.
    [[nodiscard]] Rng child(std::string_view label, std::uint64_t index = 0) const
    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : label) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        std::uint64_t mix = m_seed ^ h;
        mix = splitmix64(mix) ^ index;
        return Rng(splitmix64(mix));
    }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

    static std::uint64_t splitmix64(std::uint64_t& x) noexcept
    {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t m_seed;
    std::uint64_t m_state[4]{};
};

}  // namespace apr
