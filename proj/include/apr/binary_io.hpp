#pragma once

// Little-endian primitives for the checkpoint and index formats, plus atomic
// file replacement.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "apr/error.hpp"

namespace apr::binary {

class Writer {
  public:
    void bytes(std::string_view raw) { m_buf.insert(m_buf.end(), raw.begin(), raw.end()); }

    void u8(std::uint8_t x) { m_buf.push_back(static_cast<char>(x)); }

    void u32(std::uint32_t x)
    {
        for (int i = 0; i < 4; ++i) {
            m_buf.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
        }
    }

    void u64(std::uint64_t x)
    {
        for (int i = 0; i < 8; ++i) {
            m_buf.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
        }
    }

    void f32(float x) { u32(std::bit_cast<std::uint32_t>(x)); }
    void f64(double x) { u64(std::bit_cast<std::uint64_t>(x)); }

    void f64s(std::span<const double> xs)
    {
        for (double x : xs) {
            f64(x);
        }
    }

    [[nodiscard]] const std::vector<char>& buffer() const noexcept { return m_buf; }

  private:
    std::vector<char> m_buf;
};

class Reader {
  public:
    explicit Reader(std::vector<char> data) : m_data(std::move(data)) {}

    [[nodiscard]] std::size_t remaining() const noexcept { return m_data.size() - m_pos; }
    [[nodiscard]] bool at_end() const noexcept { return m_pos == m_data.size(); }

    std::string bytes(std::size_t n)
    {
        need(n);
        std::string out(m_data.data() + m_pos, n);
        m_pos += n;
        return out;
    }

    std::uint8_t u8()
    {
        need(1);
        return static_cast<std::uint8_t>(m_data[m_pos++]);
    }

    std::uint32_t u32()
    {
        need(4);
        std::uint32_t x = 0;
        for (int i = 0; i < 4; ++i) {
            x |= static_cast<std::uint32_t>(static_cast<unsigned char>(m_data[m_pos++])) << (8 * i);
        }
        return x;
    }

    std::uint64_t u64()
    {
        need(8);
        std::uint64_t x = 0;
        for (int i = 0; i < 8; ++i) {
            x |= static_cast<std::uint64_t>(static_cast<unsigned char>(m_data[m_pos++])) << (8 * i);
        }
        return x;
    }

    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    void f64s(std::span<double> out)
    {
        need(out.size() * 8);
        for (double& x : out) {
            x = f64();
        }
    }

  private:
    void need(std::size_t n) const
    {
        if (m_data.size() - m_pos < n) {
            throw Error(ErrorKind::Format, "truncated binary file");
        }
    }

    std::vector<char> m_data;
    std::size_t m_pos = 0;
};

[[nodiscard]] inline std::vector<char> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

[[nodiscard]] inline std::string read_text(const std::filesystem::path& path)
{
    const auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

/// Writes to `<path>.tmp` then renames over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const char> data)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::Io, "cannot write " + tmp.string());
        }
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) {
            throw Error(ErrorKind::Io, "short write to " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw Error(ErrorKind::Io, "cannot rename " + tmp.string() + ": " + ec.message());
    }
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text)
{
    write_file_atomic(path, std::span<const char>(text.data(), text.size()));
}

}  // namespace apr::binary
