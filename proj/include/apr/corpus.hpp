#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "apr/binary_io.hpp"
#include "apr/error.hpp"

namespace apr {

using PassageId = std::uint64_t;

struct Passage {
    PassageId pid = 0;
    std::string title;
    std::string text;

    /// What the passage tower reads: "title text", or just text when untitled.
    [[nodiscard]] std::string encoder_input() const { return title.empty() ? text : title + " " + text; }

    bool operator==(const Passage&) const = default;
};

/// Passages in file order with an id lookup. Ids are unique.
class Corpus {
  public:
    Corpus() = default;
    explicit Corpus(std::vector<Passage> passages)
    {
        for (auto& p : passages) {
            add(std::move(p));
        }
    }

    void add(Passage p)
    {
        if (!m_index.emplace(p.pid, m_passages.size()).second) {
            throw Error(ErrorKind::Validation, "duplicate passage id " + std::to_string(p.pid));
        }
        m_passages.push_back(std::move(p));
    }

    [[nodiscard]] std::size_t size() const noexcept { return m_passages.size(); }
    [[nodiscard]] bool empty() const noexcept { return m_passages.empty(); }
    [[nodiscard]] const std::vector<Passage>& passages() const noexcept { return m_passages; }
    [[nodiscard]] bool contains(PassageId pid) const { return m_index.contains(pid); }

    [[nodiscard]] const Passage& at(PassageId pid) const
    {
        const auto it = m_index.find(pid);
        if (it == m_index.end()) {
            throw Error(ErrorKind::DanglingId, "passage id " + std::to_string(pid) + " not in corpus");
        }
        return m_passages[it->second];
    }

  private:
    std::vector<Passage> m_passages;
    std::unordered_map<PassageId, std::size_t> m_index;
};

namespace jsonl {

using Json = nlohmann::ordered_json;

/// Calls `fn(json, line_number)` for every non-blank line. Parse errors name
/// the 1-based line.
inline void for_each_line(const std::filesystem::path& path, const std::function<void(const Json&, std::size_t)>& fn)
{
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::Io, "cannot open " + path.string());
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        Json j;
        try {
            j = Json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::Parse, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        fn(j, lineno);
    }
}

[[nodiscard]] inline std::string where(const std::filesystem::path& path, std::size_t lineno)
{
    return path.string() + ":" + std::to_string(lineno);
}

template <class T>
T field(const Json& j, const char* key, const std::filesystem::path& path, std::size_t lineno)
{
    if (!j.is_object() || !j.contains(key)) {
        throw Error(ErrorKind::MissingField, where(path, lineno) + ": missing \"" + key + "\"");
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::Parse, where(path, lineno) + ": field \"" + key + "\": " + e.what());
    }
}

}  // namespace jsonl

[[nodiscard]] inline Corpus load_corpus_jsonl(const std::filesystem::path& path)
{
    Corpus corpus;
    jsonl::for_each_line(path, [&](const jsonl::Json& j, std::size_t lineno) {
        Passage p;
        p.pid = jsonl::field<PassageId>(j, "pid", path, lineno);
        p.title = j.contains("title") ? jsonl::field<std::string>(j, "title", path, lineno) : std::string();
        p.text = jsonl::field<std::string>(j, "text", path, lineno);
        try {
            corpus.add(std::move(p));
        } catch (const Error& e) {
            throw Error(e.kind(), jsonl::where(path, lineno) + ": " + e.what());
        }
    });
    return corpus;
}

[[nodiscard]] inline std::string corpus_to_jsonl(const Corpus& corpus)
{
    std::ostringstream out;
    for (const auto& p : corpus.passages()) {
        jsonl::Json j;
        j["pid"] = p.pid;
        j["title"] = p.title;
        j["text"] = p.text;
        out << j.dump() << '\n';
    }
    return out.str();
}

inline void write_corpus_jsonl(const std::filesystem::path& path, const Corpus& corpus)
{
    binary::write_text_atomic(path, corpus_to_jsonl(corpus));
}

}  // namespace apr
