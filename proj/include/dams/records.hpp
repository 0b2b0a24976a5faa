#pragma once

// Corpus record schemas and their line-delimited JSON files.

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "dams/error.hpp"

namespace dams {

struct Utterance {
  std::string speaker;
  std::string text;
};

struct Dialogue {
  std::vector<Utterance> utterances;
  std::optional<std::string> summary;  // present in fine-tune/eval files
};

struct TextPiece {
  std::vector<std::string> sentences;  // 1 or 2
};

struct ArticleSummary {
  std::vector<std::string> article_sentences;
  std::string summary;
};

namespace detail {

inline std::string at_line(const std::string& path, std::size_t line) {
  return path + ":" + std::to_string(line) + ": ";
}

inline std::vector<std::string> string_array(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_array())
    fail(ErrorKind::data, where + "missing array field '" + key + "'");
  std::vector<std::string> out;
  for (const auto& s : j[key]) {
    if (!s.is_string()) fail(ErrorKind::data, where + "non-string entry in '" + key + "'");
    out.push_back(s.get<std::string>());
  }
  return out;
}

template <class F>
void for_each_line(const std::string& path, F&& f) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::data, at_line(path, lineno) + "malformed record: " + e.what());
    }
    f(j, at_line(path, lineno));
  }
}

template <class R, class ToJson>
void write_lines(const std::string& path, const std::vector<R>& records, ToJson&& to_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path);
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

}  // namespace detail

inline nlohmann::json to_json(const Dialogue& d) {
  nlohmann::json j;
  j["utterances"] = nlohmann::json::array();
  for (const auto& u : d.utterances) j["utterances"].push_back({{"speaker", u.speaker}, {"text", u.text}});
  if (d.summary) j["summary"] = *d.summary;
  return j;
}

inline nlohmann::json to_json(const TextPiece& p) { return {{"sentences", p.sentences}}; }

inline nlohmann::json to_json(const ArticleSummary& a) {
  return {{"article_sentences", a.article_sentences}, {"summary", a.summary}};
}

inline Dialogue dialogue_from_json(const nlohmann::json& j, const std::string& where, bool need_summary) {
  if (!j.is_object() || !j.contains("utterances") || !j["utterances"].is_array())
    fail(ErrorKind::data, where + "missing array field 'utterances'");
  Dialogue d;
  for (const auto& u : j["utterances"]) {
    if (!u.is_object() || !u.contains("speaker") || !u.contains("text") || !u["speaker"].is_string() ||
        !u["text"].is_string())
      fail(ErrorKind::data, where + "utterance needs string 'speaker' and 'text'");
    d.utterances.push_back({u["speaker"].get<std::string>(), u["text"].get<std::string>()});
    if (d.utterances.back().speaker.empty()) fail(ErrorKind::data, where + "empty speaker");
  }
  if (d.utterances.empty()) fail(ErrorKind::data, where + "dialogue without utterances");
  if (j.contains("summary")) {
    if (!j["summary"].is_string()) fail(ErrorKind::data, where + "'summary' must be a string");
    d.summary = j["summary"].get<std::string>();
  } else if (need_summary) {
    fail(ErrorKind::data, where + "missing 'summary'");
  }
  return d;
}

inline std::vector<Dialogue> read_dialogues(const std::string& path, bool need_summary = false) {
  std::vector<Dialogue> out;
  detail::for_each_line(path, [&](const nlohmann::json& j, const std::string& where) {
    out.push_back(dialogue_from_json(j, where, need_summary));
  });
  return out;
}

/// Short-text records; any record may hold a whole document, split later.
inline std::vector<std::vector<std::string>> read_shorttexts(const std::string& path) {
  std::vector<std::vector<std::string>> out;
  detail::for_each_line(path, [&](const nlohmann::json& j, const std::string& where) {
    auto s = detail::string_array(j, "sentences", where);
    if (s.empty()) fail(ErrorKind::data, where + "record without sentences");
    out.push_back(std::move(s));
  });
  return out;
}

inline std::vector<ArticleSummary> read_articles(const std::string& path) {
  std::vector<ArticleSummary> out;
  detail::for_each_line(path, [&](const nlohmann::json& j, const std::string& where) {
    ArticleSummary a;
    a.article_sentences = detail::string_array(j, "article_sentences", where);
    if (a.article_sentences.empty()) fail(ErrorKind::data, where + "article without sentences");
    if (!j.contains("summary") || !j["summary"].is_string() || j["summary"].get<std::string>().empty())
      fail(ErrorKind::data, where + "article needs a non-empty 'summary'");
    a.summary = j["summary"].get<std::string>();
    out.push_back(std::move(a));
  });
  return out;
}

inline void write_dialogues(const std::string& path, const std::vector<Dialogue>& ds) {
  detail::write_lines(path, ds, [](const Dialogue& d) { return to_json(d); });
}
inline void write_pieces(const std::string& path, const std::vector<TextPiece>& ps) {
  detail::write_lines(path, ps, [](const TextPiece& p) { return to_json(p); });
}
inline void write_articles(const std::string& path, const std::vector<ArticleSummary>& as) {
  detail::write_lines(path, as, [](const ArticleSummary& a) { return to_json(a); });
}

/// {"summary": ...} lines aligned with input order.
inline void write_summaries(const std::string& path, const std::vector<std::string>& summaries) {
  detail::write_lines(path, summaries, [](const std::string& s) { return nlohmann::json{{"summary", s}}; });
}

inline std::vector<std::string> read_summaries(const std::string& path) {
  std::vector<std::string> out;
  detail::for_each_line(path, [&](const nlohmann::json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("summary") || !j["summary"].is_string())
      fail(ErrorKind::data, where + "missing string field 'summary'");
    out.push_back(j["summary"].get<std::string>());
  });
  return out;
}

}  // namespace dams
