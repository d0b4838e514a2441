#pragma once

#include <algorithm>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "classlm/common.hpp"

namespace classlm {

/// One sentence of word ids, without boundary framing. Sentence-begin padding and the
/// predicted sentence-end are added by whoever consumes the sentence.
using Sentence = std::vector<WordId>;
using EncodedCorpus = std::vector<Sentence>;
using TextCorpus = std::vector<std::vector<std::string>>;

class Vocabulary {
public:
  static constexpr std::string_view kBos = "<s>";
  static constexpr std::string_view kEos = "</s>";
  static constexpr std::string_view kUnk = "<unk>";

  Vocabulary() = default;

  /// Adds a token and returns its id; an existing token keeps its id and gains `freq`.
  WordId add(std::string_view token, Count freq = 0) {
    if (auto it = ids_.find(std::string(token)); it != ids_.end()) {
      freq_[it->second] += freq;
      return it->second;
    }
    const auto id = static_cast<WordId>(tokens_.size());
    tokens_.emplace_back(token);
    freq_.push_back(freq);
    ids_.emplace(tokens_.back(), id);
    return id;
  }

  /// Appends the boundary and unknown tokens if missing and records their ids.
  void ensure_specials() {
    bos_ = add(kBos);
    eos_ = add(kEos);
    unk_ = add(kUnk);
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string &token(WordId id) const { return tokens_.at(id); }
  Count freq(WordId id) const { return freq_.at(id); }
  void set_freq(WordId id, Count f) { freq_.at(id) = f; }

  std::optional<WordId> find(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  /// Closed-vocabulary lookup. Boundary tokens appearing inside text are treated as unknown.
  WordId encode(std::string_view token) const {
    auto id = find(token);
    if (!id || *id == bos_ || *id == eos_) return unk_;
    return *id;
  }

  WordId bos() const noexcept { return bos_; }
  WordId eos() const noexcept { return eos_; }
  WordId unk() const noexcept { return unk_; }
  bool is_boundary(WordId id) const noexcept { return id == bos_ || id == eos_; }

  /// Text form: "#special <role> <token>" header lines, then "token<TAB>freq" with the
  /// 0-based line index (after the header) as the id.
  std::string serialize() const {
    std::string out;
    out += "#special bos " + tokens_.at(bos_) + "\n";
    out += "#special eos " + tokens_.at(eos_) + "\n";
    out += "#special unk " + tokens_.at(unk_) + "\n";
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      out += tokens_[i] + "\t" + std::to_string(freq_[i]) + "\n";
    return out;
  }

  void save(const std::filesystem::path &path) const { detail::atomic_write(path, serialize()); }

  static Vocabulary load(const std::filesystem::path &path) {
    return parse(detail::read_lines(path), path.string());
  }

  static Vocabulary parse(const std::vector<std::string> &lines, const std::string &origin = "vocabulary") {
    Vocabulary v;
    std::string bos, eos, unk;
    std::size_t i = 0;
    for (; i < lines.size() && lines[i].rfind("#special ", 0) == 0; ++i) {
      auto f = detail::split_ws(lines[i]);
      if (f.size() != 3) throw Error(origin + ": malformed special line '" + lines[i] + "'");
      if (f[1] == "bos") bos = f[2];
      else if (f[1] == "eos") eos = f[2];
      else if (f[1] == "unk") unk = f[2];
      else throw Error(origin + ": unknown special role '" + std::string(f[1]) + "'");
    }
    if (bos.empty() || eos.empty() || unk.empty()) throw Error(origin + ": missing special tokens");
    for (; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      auto f = detail::split_char(lines[i], '\t');
      if (f.size() > 2 || f[0].empty()) throw Error(origin + ": malformed line '" + lines[i] + "'");
      if (v.find(f[0])) throw Error(origin + ": duplicate token '" + std::string(f[0]) + "'");
      v.add(f[0], f.size() == 2 ? detail::parse_int<Count>(f[1], "frequency") : 0);
    }
    auto need = [&](const std::string &tok) {
      auto id = v.find(tok);
      if (!id) throw Error(origin + ": special token '" + tok + "' not in vocabulary");
      return *id;
    };
    v.bos_ = need(bos);
    v.eos_ = need(eos);
    v.unk_ = need(unk);
    if (v.bos_ == v.eos_ || v.bos_ == v.unk_ || v.eos_ == v.unk_)
      throw Error(origin + ": special tokens are not distinct");
    return v;
  }

private:
  std::vector<std::string> tokens_;
  std::vector<Count> freq_;
  std::unordered_map<std::string, WordId> ids_;
  WordId bos_ = 0, eos_ = 0, unk_ = 0;
};

/// Keeps the `max_size` most frequent tokens (ties by first occurrence) and appends the
/// special tokens. Tokens that do not make the cut are credited to the unknown token.
inline Vocabulary build_vocabulary(std::span<const std::string> tokens, std::size_t max_size) {
  if (tokens.empty()) throw Error("empty corpus");
  if (max_size == 0) throw Error("vocabulary size must be positive");

  struct Entry {
    std::string_view token;
    Count count = 0;
    std::size_t first = 0;
  };
  std::unordered_map<std::string_view, std::size_t> index;
  std::vector<Entry> entries;
  Count unk_count = 0;
  for (const auto &tok : tokens) {
    if (tok == Vocabulary::kBos || tok == Vocabulary::kEos || tok == Vocabulary::kUnk) {
      ++unk_count;
      continue;
    }
    auto [it, inserted] = index.try_emplace(tok, entries.size());
    if (inserted) entries.push_back({tok, 0, entries.size()});
    ++entries[it->second].count;
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry &a, const Entry &b) { return a.count > b.count; });

  Vocabulary v;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i < max_size) v.add(entries[i].token, entries[i].count);
    else unk_count += entries[i].count;
  }
  v.ensure_specials();
  v.set_freq(v.unk(), unk_count);
  return v;
}

inline std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> out;
  for (auto t : detail::split_ws(line)) out.emplace_back(t);
  return out;
}

/// One sentence per line, whitespace separated. Blank lines are skipped.
inline TextCorpus read_corpus(const std::filesystem::path &path) {
  TextCorpus corpus;
  for (const auto &line : detail::read_lines(path)) {
    auto toks = split_tokens(line);
    if (!toks.empty()) corpus.push_back(std::move(toks));
  }
  return corpus;
}

inline std::vector<std::string> flatten(const TextCorpus &corpus) {
  std::vector<std::string> out;
  for (const auto &s : corpus) out.insert(out.end(), s.begin(), s.end());
  return out;
}

inline EncodedCorpus encode_corpus(const TextCorpus &corpus, const Vocabulary &vocab) {
  EncodedCorpus out;
  out.reserve(corpus.size());
  for (const auto &sentence : corpus) {
    Sentence ids;
    ids.reserve(sentence.size());
    for (const auto &tok : sentence) ids.push_back(vocab.encode(tok));
    out.push_back(std::move(ids));
  }
  return out;
}

inline TextCorpus decode_corpus(const EncodedCorpus &corpus, const Vocabulary &vocab) {
  TextCorpus out;
  out.reserve(corpus.size());
  for (const auto &sentence : corpus) {
    std::vector<std::string> toks;
    for (auto id : sentence) toks.push_back(vocab.token(id));
    out.push_back(std::move(toks));
  }
  return out;
}

inline std::size_t token_count(const EncodedCorpus &corpus) {
  std::size_t n = 0;
  for (const auto &s : corpus) n += s.size();
  return n;
}

} // namespace classlm
