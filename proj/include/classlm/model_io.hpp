#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "classlm/clustering.hpp"
#include "classlm/common.hpp"
#include "classlm/events.hpp"
#include "classlm/feature_map.hpp"
#include "classlm/models.hpp"
#include "classlm/vocabulary.hpp"

namespace classlm {

/// Rebuilds the context spec of a counts file, loading tag and class maps from the paths
/// recorded in its slot headers (relative to the counts file).
inline ContextSpec spec_from_table(const EventTable &table, const Vocabulary &vocab,
                                   const std::filesystem::path &counts_path) {
  std::vector<ContextSlot> slots;
  for (const auto &info : table.slots()) {
    std::shared_ptr<const FeatureMapper> mapper;
    if (info.kind == FeatureKind::identity) {
      mapper = std::make_shared<FeatureMapper>(FeatureMapper::identity(vocab.size()));
    } else {
      auto path = detail::resolve_from_file(info.source, counts_path);
      mapper = std::make_shared<FeatureMapper>(load_feature_map(path, vocab, info.kind));
    }
    if (mapper->arity() != info.arity)
      throw Error("feature map '" + info.source + "' has arity " + std::to_string(mapper->arity()) +
                  ", counts file expects " + std::to_string(info.arity));
    slots.push_back({info.offset, std::move(mapper)});
  }
  return ContextSpec(std::move(slots));
}

struct ClassModelFile {
  std::string vocab;
  std::string counts;
  std::string clustering;
  double discount = 0.5;

  std::string serialize() const {
    return "#classlm v1\nvocab " + vocab + "\ncounts " + counts + "\nclustering " + clustering + "\ndiscount " +
           detail::format_double(discount) + "\n";
  }
};

struct InterpModelFile {
  std::string vocab;
  std::vector<std::pair<double, std::string>> components;

  std::string serialize() const {
    std::string out = "#interp v1\n#vocab " + vocab + "\n";
    for (const auto &[w, path] : components) out += "component " + detail::format_double(w) + " " + path + "\n";
    return out;
  }
};

struct LoadedModel {
  std::shared_ptr<const LanguageModel> model;
  std::shared_ptr<const Vocabulary> vocab;
  std::filesystem::path vocab_path;
  std::string kind;
};

namespace detail {

inline std::string header_value(const std::vector<std::string> &lines, std::string_view key, const std::string &origin) {
  for (const auto &line : lines) {
    auto f = split_ws(line);
    if (f.size() == 2 && f[0] == key) return std::string(f[1]);
  }
  throw Error(origin + ": missing '" + std::string(key) + "' entry");
}

} // namespace detail

inline LoadedModel load_model(const std::filesystem::path &path) {
  const auto lines = detail::read_lines(path);
  const std::string origin = path.string();
  if (lines.empty()) throw Error(origin + ": empty model file");
  LoadedModel out;
  if (lines[0] == "#backoff v1") {
    out.kind = "backoff";
    out.vocab_path = detail::resolve_from_file(detail::header_value(lines, "#vocab", origin), path);
    out.vocab = std::make_shared<Vocabulary>(Vocabulary::load(out.vocab_path));
    auto m = BackoffModel::parse(lines, origin);
    if (m.vocab_size() != out.vocab->size()) throw Error(origin + ": vocabulary size mismatch");
    out.model = std::make_shared<BackoffModel>(std::move(m));
  } else if (lines[0] == "#classlm v1") {
    out.kind = "classlm";
    const auto vocab_path = detail::resolve_from_file(detail::header_value(lines, "vocab", origin), path);
    const auto counts_path = detail::resolve_from_file(detail::header_value(lines, "counts", origin), path);
    const auto clust_path = detail::resolve_from_file(detail::header_value(lines, "clustering", origin), path);
    const double discount = detail::parse_double(detail::header_value(lines, "discount", origin), "discount");
    auto vocab = std::make_shared<Vocabulary>(Vocabulary::load(vocab_path));
    out.vocab_path = vocab_path;
    auto table = std::make_shared<const EventTable>(EventTable::load(counts_path));
    if (table->vocab_size() != vocab->size()) throw Error(origin + ": counts do not match the vocabulary");
    auto spec = spec_from_table(*table, *vocab, counts_path);
    auto cl = load_clustering(clust_path, table);
    out.model = std::make_shared<ClassLM>(std::move(cl), std::move(spec), vocab->bos(), discount);
    out.vocab = std::move(vocab);
  } else if (lines[0] == "#interp v1") {
    out.kind = "interp";
    out.vocab_path = detail::resolve_from_file(detail::header_value(lines, "#vocab", origin), path);
    out.vocab = std::make_shared<Vocabulary>(Vocabulary::load(out.vocab_path));
    std::vector<std::shared_ptr<const LanguageModel>> comps;
    std::vector<double> weights;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      auto f = detail::split_ws(lines[i]);
      if (f.empty() || f[0] != "component") continue;
      if (f.size() != 3) throw Error(origin + ": malformed component line '" + lines[i] + "'");
      weights.push_back(detail::parse_double(f[1], "weight"));
      auto sub = load_model(detail::resolve_from_file(f[2], path));
      if (sub.vocab->size() != out.vocab->size()) throw Error(origin + ": component vocabulary mismatch");
      comps.push_back(std::move(sub.model));
    }
    out.model = std::make_shared<InterpolatedModel>(std::move(comps), std::move(weights));
  } else {
    throw Error(origin + ": unrecognized model file");
  }
  return out;
}

} // namespace classlm
