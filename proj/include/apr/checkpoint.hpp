#pragma once

// Checkpoint layout (all little-endian):
//   "APRCKPT1"  u32 version  u32 d_f  u32 d  u32 h
//   f64[d*d_f] W_adapt_q  f64[d*d_f] W_adapt_p  f64[h*d] W_q  f64[h*d] W_p
//   f64[h] w_a  f64 log_tau
//   tokenizer block: u8 lowercase, u8 strip_diacritics, u8 normalization, u8 pattern
//   u8 has_optimizer; if 1:
//     f64 lr, beta1, beta2, eps, weight_decay; u64 step;
//     per parameter group in the order above: f64[n] m, f64[n] v

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "apr/binary_io.hpp"
#include "apr/error.hpp"
#include "apr/model.hpp"
#include "apr/optim.hpp"
#include "apr/text.hpp"

namespace apr {

inline constexpr std::string_view kCheckpointMagic = "APRCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    TokenizerConfig tokenizer;
    Model model;
    std::optional<OptimizerState> optimizer;

    [[nodiscard]] ModelDims dims() const { return model.dims(); }

    [[nodiscard]] TextPipeline pipeline() const { return {tokenizer, HashingFeaturizer(model.dims().feature_dim)}; }

    bool operator==(const Checkpoint& o) const
    {
        return tokenizer == o.tokenizer && model == o.model && optimizer == o.optimizer;
    }
};

[[nodiscard]] inline std::vector<char> serialize_checkpoint(const Checkpoint& ckpt)
{
    ckpt.model.validate();
    const ModelDims dims = ckpt.dims();
    binary::Writer w;
    w.bytes(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(dims.feature_dim));
    w.u32(static_cast<std::uint32_t>(dims.embed_dim));
    w.u32(static_cast<std::uint32_t>(dims.hidden_dim));
    Model copy = ckpt.model;
    for (const auto& view : parameter_views(copy)) {
        w.f64s(view.values);
    }
    w.u8(ckpt.tokenizer.lowercase ? 1 : 0);
    w.u8(ckpt.tokenizer.strip_diacritics ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(ckpt.tokenizer.normalization));
    w.u8(static_cast<std::uint8_t>(ckpt.tokenizer.pattern));
    if (ckpt.optimizer) {
        const auto& opt = *ckpt.optimizer;
        w.u8(1);
        w.f64(opt.config.lr);
        w.f64(opt.config.beta1);
        w.f64(opt.config.beta2);
        w.f64(opt.config.eps);
        w.f64(opt.config.weight_decay);
        w.u64(opt.step);
        for (std::size_t g = 0; g < opt.m.size(); ++g) {
            w.f64s(opt.m[g]);
            w.f64s(opt.v[g]);
        }
    } else {
        w.u8(0);
    }
    return w.buffer();
}

[[nodiscard]] inline Checkpoint deserialize_checkpoint(std::vector<char> bytes)
{
    binary::Reader r(std::move(bytes));
    if (r.remaining() < kCheckpointMagic.size() || r.bytes(kCheckpointMagic.size()) != kCheckpointMagic) {
        throw Error(ErrorKind::Format, "not a checkpoint (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw Error(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
    }
    ModelDims dims;
    dims.feature_dim = r.u32();
    dims.embed_dim = r.u32();
    dims.hidden_dim = r.u32();
    if (dims.feature_dim == 0 || dims.embed_dim < 2 || dims.hidden_dim == 0) {
        throw Error(ErrorKind::Format, "checkpoint has invalid dimensions");
    }
    const std::uint64_t need = 8ULL * parameter_count(dims);
    if (r.remaining() < need) {
        throw Error(ErrorKind::Format, "truncated checkpoint");
    }

    Checkpoint ckpt;
    ckpt.model.question = {Matrix(dims.embed_dim, dims.feature_dim), Tower::Question};
    ckpt.model.passage = {Matrix(dims.embed_dim, dims.feature_dim), Tower::Passage};
    ckpt.model.head = {Matrix(dims.hidden_dim, dims.embed_dim), Matrix(dims.hidden_dim, dims.embed_dim), Vector(dims.hidden_dim)};
    const auto views = parameter_views(ckpt.model);
    for (const auto& view : views) {
        r.f64s(view.values);
    }
    ckpt.tokenizer.lowercase = r.u8() != 0;
    ckpt.tokenizer.strip_diacritics = r.u8() != 0;
    const auto norm = r.u8();
    const auto pattern = r.u8();
    if (norm > 1 || pattern != 1) {
        throw Error(ErrorKind::Format, "unknown tokenizer settings in checkpoint");
    }
    ckpt.tokenizer.normalization = static_cast<UnicodeNormalization>(norm);
    ckpt.tokenizer.pattern = static_cast<TokenPattern>(pattern);

    const auto has_opt = r.u8();
    if (has_opt == 1) {
        OptimizerState opt;
        opt.config.lr = r.f64();
        opt.config.beta1 = r.f64();
        opt.config.beta2 = r.f64();
        opt.config.eps = r.f64();
        opt.config.weight_decay = r.f64();
        opt.step = r.u64();
        for (const auto& view : views) {
            opt.m.emplace_back(view.values.size());
            opt.v.emplace_back(view.values.size());
            r.f64s(opt.m.back());
            r.f64s(opt.v.back());
        }
        ckpt.optimizer = std::move(opt);
    } else if (has_opt != 0) {
        throw Error(ErrorKind::Format, "bad optimizer-state flag");
    }
    if (!r.at_end()) {
        throw Error(ErrorKind::Format, "trailing bytes after checkpoint");
    }
    return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt)
{
    binary::write_file_atomic(path, serialize_checkpoint(ckpt));
}

[[nodiscard]] inline Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    return deserialize_checkpoint(binary::read_file(path));
}

}  // namespace apr
