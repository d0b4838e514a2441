#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "classlm/common.hpp"
#include "classlm/vocabulary.hpp"

namespace classlm {

enum class FeatureKind { identity, tag_map, class_map };

inline char kind_letter(FeatureKind k) {
  switch (k) {
  case FeatureKind::identity: return 'w';
  case FeatureKind::tag_map: return 't';
  case FeatureKind::class_map: return 'g';
  }
  return '?';
}

inline FeatureKind kind_from_letter(char c) {
  switch (c) {
  case 'w': return FeatureKind::identity;
  case 't': return FeatureKind::tag_map;
  case 'g': return FeatureKind::class_map;
  default: throw Error(std::string("unknown feature kind '") + c + "'");
  }
}

/// Total function from word ids to feature values in [0, arity).
class FeatureMapper {
public:
  FeatureMapper() = default;

  FeatureMapper(std::string name, FeatureKind kind, std::vector<FeatureId> table, std::size_t arity,
                std::vector<std::string> value_names = {})
      : name_(std::move(name)), kind_(kind), table_(std::move(table)), arity_(arity),
        value_names_(std::move(value_names)) {
    for (auto v : table_)
      if (v >= arity_) throw Error("feature value " + std::to_string(v) + " outside arity " + std::to_string(arity_));
  }

  static FeatureMapper identity(std::size_t vocab_size) {
    std::vector<FeatureId> table(vocab_size);
    for (std::size_t i = 0; i < vocab_size; ++i) table[i] = static_cast<FeatureId>(i);
    return FeatureMapper("identity", FeatureKind::identity, std::move(table), vocab_size);
  }

  FeatureId operator()(WordId w) const { return table_.at(w); }

  const std::string &name() const noexcept { return name_; }
  FeatureKind kind() const noexcept { return kind_; }
  std::size_t arity() const noexcept { return arity_; }
  std::size_t size() const noexcept { return table_.size(); }
  const std::vector<FeatureId> &table() const noexcept { return table_; }

  /// Printable form of a feature value: the tag string for tag maps, the number otherwise.
  std::string value_name(FeatureId v) const {
    if (v < value_names_.size()) return value_names_[v];
    return std::to_string(v);
  }

  /// "word<TAB>value" lines in id order.
  std::string serialize(const Vocabulary &vocab) const {
    if (table_.size() != vocab.size()) throw Error("feature map does not match vocabulary size");
    std::string out;
    for (std::size_t w = 0; w < table_.size(); ++w)
      out += vocab.token(static_cast<WordId>(w)) + "\t" + value_name(table_[w]) + "\n";
    return out;
  }

private:
  std::string name_;
  FeatureKind kind_ = FeatureKind::identity;
  std::vector<FeatureId> table_;
  std::size_t arity_ = 0;
  std::vector<std::string> value_names_;
};

/// Parses "word<TAB>value" lines with an optional "#default<TAB>value" line.
///
/// Tag maps take arbitrary value strings; value ids follow the sorted order of the distinct
/// values used by the vocabulary, and boundary tokens the file does not mention receive a
/// value named after the token. Class maps take non-negative integers used as ids directly.
/// Words outside the vocabulary are ignored.
inline FeatureMapper parse_feature_map(const std::vector<std::string> &lines, const Vocabulary &vocab,
                                       FeatureKind kind, std::string name) {
  if (kind == FeatureKind::identity) return FeatureMapper::identity(vocab.size());

  std::vector<std::optional<std::string>> assigned(vocab.size());
  std::optional<std::string> fallback;
  for (const auto &line : lines) {
    if (line.empty()) continue;
    auto f = detail::split_char(line, '\t');
    if (f.size() != 2 || f[0].empty() || f[1].empty())
      throw Error("malformed feature map line '" + line + "'");
    const std::string value(f[1]);
    if (f[0] == "#default") {
      if (fallback && *fallback != value) throw Error("ambiguous feature map");
      fallback = value;
      continue;
    }
    auto id = vocab.find(f[0]);
    if (!id) continue;
    auto &slot = assigned[*id];
    if (slot && *slot != value) throw Error("ambiguous feature map");
    slot = value;
  }

  for (std::size_t w = 0; w < assigned.size(); ++w) {
    if (assigned[w]) continue;
    const auto id = static_cast<WordId>(w);
    if (kind == FeatureKind::tag_map && vocab.size() > 0 && vocab.is_boundary(id))
      assigned[w] = vocab.token(id);
    else if (fallback)
      assigned[w] = fallback;
    else
      throw Error("incomplete feature map");
  }

  std::vector<FeatureId> table(vocab.size());
  if (kind == FeatureKind::class_map) {
    std::size_t arity = 0;
    for (std::size_t w = 0; w < assigned.size(); ++w) {
      table[w] = detail::parse_int<FeatureId>(*assigned[w], "class id");
      arity = std::max<std::size_t>(arity, table[w] + 1);
    }
    return FeatureMapper(std::move(name), kind, std::move(table), arity);
  }

  std::map<std::string, FeatureId> values;
  for (const auto &a : assigned) values.emplace(*a, 0);
  std::vector<std::string> names;
  for (auto &[value, id] : values) {
    id = static_cast<FeatureId>(names.size());
    names.push_back(value);
  }
  for (std::size_t w = 0; w < assigned.size(); ++w) table[w] = values.at(*assigned[w]);
  const std::size_t arity = names.size();
  return FeatureMapper(std::move(name), kind, std::move(table), arity, std::move(names));
}

inline FeatureMapper load_feature_map(const std::filesystem::path &path, const Vocabulary &vocab,
                                      FeatureKind kind) {
  return parse_feature_map(detail::read_lines(path), vocab, kind, path.generic_string());
}

} // namespace classlm
