#pragma once

// Tokenization and hashed bag-of-words features: the frozen front end of
// both encoder towers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include "apr/error.hpp"
#include "apr/numerics.hpp"

namespace apr {

enum class UnicodeNormalization : std::uint8_t { None = 0, Nfc = 1 };
enum class TokenPattern : std::uint8_t { WhitespacePunctuation = 1 };

struct TokenizerConfig {
    bool lowercase = true;
    /// Drops Arabic combining marks U+064B..U+0652 and U+0670.
    bool strip_diacritics = true;
    UnicodeNormalization normalization = UnicodeNormalization::Nfc;
    TokenPattern pattern = TokenPattern::WhitespacePunctuation;

    bool operator==(const TokenizerConfig&) const = default;
};

[[nodiscard]] constexpr bool is_arabic_diacritic(UChar32 cp) noexcept
{
    return (cp >= 0x064B && cp <= 0x0652) || cp == 0x0670;
}

/// Splits on Unicode whitespace; every punctuation code point becomes a
/// token of its own. Invalid UTF-8 sequences decode to U+FFFD.
[[nodiscard]] inline std::vector<std::string> tokenize(std::string_view text, const TokenizerConfig& cfg = {})
{
    icu::UnicodeString ustr = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
    if (cfg.normalization == UnicodeNormalization::Nfc) {
        UErrorCode status = U_ZERO_ERROR;
        const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
        if (U_FAILURE(status)) {
            throw Error(ErrorKind::Io, "ICU NFC normalizer unavailable");
        }
        ustr = nfc->normalize(ustr, status);
        if (U_FAILURE(status)) {
            throw Error(ErrorKind::Parse, "NFC normalization failed");
        }
    }

    std::vector<std::string> tokens;
    icu::UnicodeString current;
    auto flush = [&] {
        if (!current.isEmpty()) {
            std::string utf8;
            current.toUTF8String(utf8);
            tokens.push_back(std::move(utf8));
            current.remove();
        }
    };

    for (int32_t i = 0; i < ustr.length();) {
        UChar32 cp = ustr.char32At(i);
        i += U16_LENGTH(cp);
        if (cfg.strip_diacritics && is_arabic_diacritic(cp)) {
            continue;
        }
        if (cfg.lowercase) {
            cp = u_tolower(cp);
        }
        if (u_isUWhiteSpace(cp)) {
            flush();
        } else if (u_ispunct(cp)) {
            flush();
            current.append(cp);
            flush();
        } else {
            current.append(cp);
        }
    }
    flush();
    return tokens;
}

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

[[nodiscard]] constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept
{
    std::uint64_t h = kFnvOffset;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= kFnvPrime;
    }
    return h;
}

/// Sparse feature vector with strictly ascending indices.
struct SparseFeatures {
    std::size_t dim = 0;
    std::vector<std::pair<std::uint32_t, double>> entries;

    [[nodiscard]] bool empty() const noexcept { return entries.empty(); }

    [[nodiscard]] Vector to_dense() const
    {
        Vector out(dim, 0.0);
        for (const auto& [idx, value] : entries) {
            out[idx] = value;
        }
        return out;
    }
};

class HashingFeaturizer {
  public:
    explicit HashingFeaturizer(std::size_t feature_dim = 1024) : m_dim(feature_dim)
    {
        if (feature_dim == 0) {
            throw Error(ErrorKind::Config, "feature_dim must be positive");
        }
    }

    [[nodiscard]] std::size_t dim() const noexcept { return m_dim; }

    [[nodiscard]] std::uint32_t bucket(std::string_view token) const noexcept
    {
        return static_cast<std::uint32_t>(fnv1a64(token) % m_dim);
    }

    /// Token counts per bucket scaled by 1/sqrt(token count).
    [[nodiscard]] SparseFeatures featurize_sparse(std::span<const std::string> tokens) const
    {
        SparseFeatures out{m_dim, {}};
        if (tokens.empty()) {
            return out;
        }
        std::vector<std::uint32_t> buckets;
        buckets.reserve(tokens.size());
        for (const auto& t : tokens) {
            buckets.push_back(bucket(t));
        }
        std::sort(buckets.begin(), buckets.end());
        const double scale = 1.0 / std::sqrt(static_cast<double>(tokens.size()));
        for (std::size_t i = 0; i < buckets.size();) {
            std::size_t j = i;
            while (j < buckets.size() && buckets[j] == buckets[i]) {
                ++j;
            }
            out.entries.emplace_back(buckets[i], static_cast<double>(j - i) * scale);
            i = j;
        }
        return out;
    }

    [[nodiscard]] Vector featurize(std::span<const std::string> tokens) const
    {
        return featurize_sparse(tokens).to_dense();
    }

  private:
    std::size_t m_dim;
};

}  // namespace apr
