#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "classlm/clustering.hpp"
#include "classlm/common.hpp"
#include "classlm/events.hpp"
#include "classlm/vocabulary.hpp"

namespace classlm {

/// p(word | history), where history is the part of the current sentence before the word.
/// Models pad the history with the sentence-begin token themselves.
class LanguageModel {
public:
  virtual ~LanguageModel() = default;
  virtual double prob(std::span<const WordId> history, WordId word) const = 0;
  virtual std::size_t vocab_size() const = 0;
  /// A vocabulary member that is never predicted (the sentence-begin token), if any.
  virtual std::optional<WordId> unpredicted() const = 0;
  /// Raw number of stored probability entries; not comparable across model families.
  virtual std::size_t parameter_count() const = 0;
};

class UniformModel final : public LanguageModel {
public:
  explicit UniformModel(std::size_t vocab_size, std::optional<WordId> unpredicted = std::nullopt)
      : vocab_size_(vocab_size), unpredicted_(unpredicted) {
    const std::size_t n = vocab_size - (unpredicted ? 1 : 0);
    if (n == 0) throw Error("uniform model over an empty vocabulary");
    p_ = 1.0 / static_cast<double>(n);
  }
  double prob(std::span<const WordId>, WordId word) const override {
    if (word >= vocab_size_) throw Error("word id outside vocabulary");
    return unpredicted_ && word == *unpredicted_ ? 0.0 : p_;
  }
  std::size_t vocab_size() const override { return vocab_size_; }
  std::optional<WordId> unpredicted() const override { return unpredicted_; }
  std::size_t parameter_count() const override { return 0; }

private:
  std::size_t vocab_size_;
  std::optional<WordId> unpredicted_;
  double p_ = 0.0;
};

/// Class-based model p(w|c) = p(G(w) | S(c)) * p(w | G(w)).
///
/// p(w|g) = N(w)/N(g). p(g|s) is interpolated absolute discounting toward N(g)/N:
///   p(g|s) = max(N(s,g) - D, 0)/N(s) + D * |{g : N(s,g) > 0}| / N(s) * N(g)/N.
/// An unseen context takes the state holding most of the events of its longest observed
/// suffix, or the largest state when even the nearest value was never seen.
class ClassLM final : public LanguageModel {
public:
  ClassLM(Clustering clustering, ContextSpec spec, WordId bos, double discount = 0.5)
      : cl_(std::move(clustering)), spec_(std::move(spec)), bos_(bos), discount_(discount) {
    const auto &table = cl_.table();
    if (!(discount_ >= 0.0 && discount_ < 1.0)) throw Error("class model discount must lie in [0, 1)");
    if (spec_.order() != table.order()) throw Error("context spec does not match the event table");
    for (std::size_t i = 0; i < spec_.order(); ++i) {
      const auto &slot = spec_.slots()[i];
      const auto &info = table.slots()[i];
      if (slot.offset != info.offset || slot.mapper->arity() != info.arity || slot.mapper->kind() != info.kind)
        throw Error("context slot " + std::to_string(i) + " does not match the event table");
      if (slot.mapper->size() != table.vocab_size()) throw Error("feature map does not cover the vocabulary");
    }
    if (bos_ >= table.vocab_size()) throw Error("sentence-begin id outside vocabulary");

    occupied_.assign(cl_.num_states(), 0);
    for (StateId s = 0; s < cl_.num_states(); ++s)
      for (CategoryId g = 0; g < cl_.num_categories(); ++g)
        if (cl_.joint(s, g) > 0) ++occupied_[s];

    largest_state_ = static_cast<StateId>(
        std::max_element(cl_.state_counts().begin(), cl_.state_counts().end()) - cl_.state_counts().begin());

    // Majority state per proper suffix, weighted by context counts (ties to the lowest id).
    const std::size_t L = table.order();
    suffix_state_.resize(L);
    std::vector<std::map<ContextTuple, std::map<StateId, Count>>> votes(L);
    for (ContextId c = 0; c < table.num_contexts(); ++c) {
      auto tuple = table.context(c);
      for (std::size_t len = 1; len < L; ++len)
        votes[len][ContextTuple(tuple.end() - static_cast<std::ptrdiff_t>(len), tuple.end())][cl_.state_of(c)] +=
            table.context_count(c);
    }
    for (std::size_t len = 1; len < L; ++len) {
      for (const auto &[suffix, tally] : votes[len]) {
        StateId best = tally.begin()->first;
        Count best_n = tally.begin()->second;
        for (const auto &[s, n] : tally)
          if (n > best_n) best = s, best_n = n;
        suffix_state_[len].emplace(suffix, best);
      }
    }
  }

  const Clustering &clustering() const noexcept { return cl_; }
  const ContextSpec &spec() const noexcept { return spec_; }
  double discount() const noexcept { return discount_; }

  StateId resolve_state(std::span<const FeatureId> tuple) const {
    const auto &table = cl_.table();
    if (auto c = table.find_context(tuple)) return cl_.state_of(*c);
    for (std::size_t len = tuple.size() - 1; len >= 1; --len) {
      auto it = suffix_state_[len].find(ContextTuple(tuple.end() - static_cast<std::ptrdiff_t>(len), tuple.end()));
      if (it != suffix_state_[len].end()) return it->second;
    }
    return largest_state_;
  }

  double category_prob(StateId s, CategoryId g) const {
    const double total = static_cast<double>(cl_.table().total());
    const double marginal = static_cast<double>(cl_.category_count(g)) / total;
    const Count ns = cl_.state_count(s);
    if (ns == 0) return marginal;
    const double n = static_cast<double>(ns);
    const double seen = std::max(static_cast<double>(cl_.joint(s, g)) - discount_, 0.0) / n;
    return seen + discount_ * static_cast<double>(occupied_[s]) / n * marginal;
  }

  /// p(w | state s).
  double state_prob(StateId s, WordId w) const {
    if (w >= vocab_size()) throw Error("word id outside vocabulary");
    const Count nw = cl_.table().word_count(w);
    if (nw == 0) return 0.0;
    const auto g = cl_.category_of(w);
    return category_prob(s, g) * static_cast<double>(nw) / static_cast<double>(cl_.category_count(g));
  }

  double prob_context(std::span<const FeatureId> tuple, WordId w) const { return state_prob(resolve_state(tuple), w); }

  double prob(std::span<const WordId> history, WordId word) const override {
    ContextTuple tuple;
    spec_.context_at(history, history.size(), bos_, tuple);
    return prob_context(tuple, word);
  }

  std::size_t vocab_size() const override { return cl_.table().vocab_size(); }
  std::optional<WordId> unpredicted() const override { return bos_; }
  std::size_t parameter_count() const override {
    std::size_t words = 0;
    for (auto n : cl_.table().word_counts()) words += n > 0;
    return cl_.nonzero_joint_cells() + words;
  }

private:
  Clustering cl_;
  ContextSpec spec_;
  WordId bos_;
  double discount_;
  std::vector<std::size_t> occupied_;
  StateId largest_state_ = 0;
  std::vector<std::map<ContextTuple, StateId>> suffix_state_;
};

/// Counts of every n-gram order up to `order`, keyed by history (history length = n - 1).
struct NgramCounts {
  using History = std::vector<WordId>;
  std::size_t order = 0;
  std::vector<std::map<History, std::map<WordId, Count>>> levels;

  explicit NgramCounts(std::size_t n = 0) : order(n), levels(n) {}

  void add(const History &history, WordId w, Count c = 1) {
    if (history.size() >= order) throw Error("history too long for n-gram order");
    levels[history.size()][history][w] += c;
  }

  /// Histories are padded with `bos`; the sentence end is predicted once per sentence.
  static NgramCounts collect(const EncodedCorpus &corpus, std::size_t order, WordId bos, WordId eos) {
    NgramCounts counts(order);
    for (const auto &sentence : corpus) {
      for (std::size_t pos = 0; pos <= sentence.size(); ++pos) {
        const WordId w = pos < sentence.size() ? sentence[pos] : eos;
        for (std::size_t k = 0; k < order; ++k) {
          History h(k);
          for (std::size_t j = 0; j < k; ++j) {
            const auto p = static_cast<std::ptrdiff_t>(pos) - static_cast<std::ptrdiff_t>(k - j);
            h[j] = p < 0 ? bos : sentence[static_cast<std::size_t>(p)];
          }
          counts.levels[k][h][w] += 1;
        }
      }
    }
    return counts;
  }
};

struct BackoffParams {
  std::size_t order = 3;
  /// cutoffs[n-1]: n-grams seen at most this often are dropped at order n. The unigram
  /// cutoff is ignored.
  std::vector<Count> cutoffs = {0, 0, 1};
  double discount = 0.5;

  Count cutoff(std::size_t n) const { return n >= 2 && n - 1 < cutoffs.size() ? cutoffs[n - 1] : 0; }
};

/// Interpolated absolute-discounting n-gram model stored in backoff form: each retained history
/// keeps full probabilities of its seen words and a weight for everything else,
///   p(w|h) = stored(h, w)            if (h, w) retained,
///          = alpha(h) * p(w|h')      otherwise (h' drops the farthest word),
/// and a history with nothing retained falls through to p(w|h'). The unigram level smooths
/// toward a uniform distribution over the predicted vocabulary.
class BackoffModel final : public LanguageModel {
public:
  struct HistoryEntry {
    double backoff = 0.0;
    std::map<WordId, double> probs;
  };
  using History = NgramCounts::History;

  BackoffModel() = default;

  static BackoffModel train(const NgramCounts &counts, const BackoffParams &params, std::size_t vocab_size,
                            std::optional<WordId> unpredicted) {
    if (params.order < 1 || params.order > counts.order)
      throw Error("n-gram order must lie in [1, " + std::to_string(counts.order) + "]");
    if (!(params.discount > 0.0 && params.discount < 1.0)) throw Error("discount must lie in (0, 1)");
    BackoffModel m;
    m.order_ = params.order;
    m.discount_ = params.discount;
    m.vocab_size_ = vocab_size;
    m.unpredicted_ = unpredicted;
    m.levels_.resize(params.order);
    const std::size_t predicted = vocab_size - (unpredicted ? 1 : 0);
    if (predicted == 0) throw Error("nothing to predict");
    m.uniform_ = 1.0 / static_cast<double>(predicted);
    const double D = params.discount;

    for (std::size_t k = 0; k < params.order; ++k) {
      const Count cutoff = params.cutoff(k + 1);
      for (const auto &[h, words] : counts.levels[k]) {
        Count total = 0, types = 0;
        for (const auto &[w, c] : words) {
          if (w >= vocab_size) throw Error("word id outside vocabulary");
          if (unpredicted && w == *unpredicted) throw Error("unpredicted word appears as an event");
          if (c > cutoff) total += c, ++types;
        }
        if (total == 0) continue;
        HistoryEntry e;
        e.backoff = D * static_cast<double>(types) / static_cast<double>(total);
        for (const auto &[w, c] : words) {
          if (c <= cutoff) continue;
          const double lower = k == 0 ? m.uniform_ : m.prob_ngram(std::span(h).subspan(1), w);
          e.probs.emplace(w, (static_cast<double>(c) - D) / static_cast<double>(total) + e.backoff * lower);
        }
        m.levels_[k].emplace(h, std::move(e));
      }
    }
    if (m.levels_[0].empty()) throw Error("no unigram counts");
    return m;
  }

  /// p(w | h) for an explicit history of length <= order - 1 (nearest word last).
  double prob_ngram(std::span<const WordId> history, WordId w) const {
    if (w >= vocab_size_) throw Error("word id outside vocabulary");
    if (unpredicted_ && w == *unpredicted_) return 0.0;
    if (history.size() >= order_) history = history.subspan(history.size() - (order_ - 1));
    double scale = 1.0;
    for (std::size_t k = history.size();; --k) {
      const auto h = history.subspan(history.size() - k);
      auto it = levels_[k].find(History(h.begin(), h.end()));
      if (it != levels_[k].end()) {
        auto p = it->second.probs.find(w);
        if (p != it->second.probs.end()) return scale * p->second;
        scale *= it->second.backoff;
      }
      if (k == 0) return scale * uniform_;
    }
  }

  double prob(std::span<const WordId> history, WordId word) const override {
    History h(order_ - 1, bos_or_zero());
    const std::size_t take = std::min(history.size(), order_ - 1);
    std::copy(history.end() - static_cast<std::ptrdiff_t>(take), history.end(), h.end() - static_cast<std::ptrdiff_t>(take));
    return prob_ngram(h, word);
  }

  std::size_t order() const noexcept { return order_; }
  double discount() const noexcept { return discount_; }
  std::size_t vocab_size() const override { return vocab_size_; }
  std::optional<WordId> unpredicted() const override { return unpredicted_; }
  std::size_t parameter_count() const override {
    std::size_t n = 0;
    for (const auto &level : levels_)
      for (const auto &[h, e] : level) n += e.probs.size() + 1;
    return n;
  }
  const std::vector<std::map<History, HistoryEntry>> &levels() const noexcept { return levels_; }

  /// Text form: header, "\backoff" lines "history<TAB>log-weight", "\probs" lines
  /// "history<TAB>word<TAB>log-prob". Histories are space-separated ids (empty for unigrams),
  /// sorted by length and then lexicographically.
  std::string serialize(const std::string &vocab_ref = "") const {
    std::string out = "#backoff v1\n";
    if (!vocab_ref.empty()) out += "#vocab " + vocab_ref + "\n";
    out += "#order " + std::to_string(order_) + "\n";
    out += "#discount " + detail::format_double(discount_) + "\n";
    out += "#vocab_size " + std::to_string(vocab_size_) + "\n";
    if (unpredicted_) out += "#unpredicted " + std::to_string(*unpredicted_) + "\n";
    out += "\\backoff\n";
    for (const auto &level : levels_)
      for (const auto &[h, e] : level) out += join(h) + "\t" + detail::format_double(std::log(e.backoff)) + "\n";
    out += "\\probs\n";
    for (const auto &level : levels_)
      for (const auto &[h, e] : level) {
        const auto key = join(h);
        for (const auto &[w, p] : e.probs)
          out += key + "\t" + std::to_string(w) + "\t" + detail::format_double(std::log(p)) + "\n";
      }
    return out;
  }

  static BackoffModel parse(const std::vector<std::string> &lines, const std::string &origin = "backoff model") {
    if (lines.empty() || lines[0] != "#backoff v1") throw Error(origin + ": not a backoff model file");
    BackoffModel m;
    std::size_t i = 1;
    for (; i < lines.size() && !lines[i].empty() && lines[i][0] == '#'; ++i) {
      auto f = detail::split_ws(lines[i]);
      if (f.size() != 2) throw Error(origin + ": malformed header '" + lines[i] + "'");
      if (f[0] == "#order") m.order_ = detail::parse_int<std::size_t>(f[1], "order");
      else if (f[0] == "#discount") m.discount_ = detail::parse_double(f[1], "discount");
      else if (f[0] == "#vocab_size") m.vocab_size_ = detail::parse_int<std::size_t>(f[1], "vocab size");
      else if (f[0] == "#unpredicted") m.unpredicted_ = detail::parse_int<WordId>(f[1], "word id");
      else if (f[0] != "#vocab") throw Error(origin + ": unknown header '" + lines[i] + "'");
    }
    if (m.order_ == 0 || m.vocab_size_ == 0) throw Error(origin + ": incomplete header");
    m.uniform_ = 1.0 / static_cast<double>(m.vocab_size_ - (m.unpredicted_ ? 1 : 0));
    m.levels_.resize(m.order_);
    if (i >= lines.size() || lines[i] != "\\backoff") throw Error(origin + ": missing backoff section");
    for (++i; i < lines.size() && lines[i] != "\\probs"; ++i) {
      auto f = detail::split_char(lines[i], '\t');
      if (f.size() != 2) throw Error(origin + ": malformed backoff line '" + lines[i] + "'");
      auto h = split_history(f[0]);
      if (h.size() >= m.order_) throw Error(origin + ": history longer than the model order");
      m.levels_[h.size()][h].backoff = std::exp(detail::parse_double(f[1], "log weight"));
    }
    if (i >= lines.size()) throw Error(origin + ": missing probs section");
    for (++i; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      auto f = detail::split_char(lines[i], '\t');
      if (f.size() != 3) throw Error(origin + ": malformed prob line '" + lines[i] + "'");
      auto h = split_history(f[0]);
      if (h.size() >= m.order_) throw Error(origin + ": history longer than the model order");
      auto it = m.levels_[h.size()].find(h);
      if (it == m.levels_[h.size()].end()) throw Error(origin + ": probability for a history without backoff weight");
      it->second.probs[detail::parse_int<WordId>(f[1], "word id")] = std::exp(detail::parse_double(f[2], "log prob"));
    }
    return m;
  }

  static BackoffModel load(const std::filesystem::path &path) { return parse(detail::read_lines(path), path.string()); }

private:
  WordId bos_or_zero() const { return unpredicted_.value_or(0); }

  static std::string join(const History &h) {
    std::string s;
    for (auto w : h) {
      if (!s.empty()) s += ' ';
      s += std::to_string(w);
    }
    return s;
  }
  static History split_history(std::string_view s) {
    History h;
    for (auto t : detail::split_ws(s)) h.push_back(detail::parse_int<WordId>(t, "history word"));
    return h;
  }

  std::size_t order_ = 0;
  double discount_ = 0.5;
  std::size_t vocab_size_ = 0;
  std::optional<WordId> unpredicted_;
  double uniform_ = 0.0;
  std::vector<std::map<History, HistoryEntry>> levels_;
};

/// Linear mixture sum_k lambda_k p_k(w | history) over models sharing one vocabulary.
class InterpolatedModel final : public LanguageModel {
public:
  InterpolatedModel(std::vector<std::shared_ptr<const LanguageModel>> components, std::vector<double> weights)
      : components_(std::move(components)), weights_(std::move(weights)) {
    if (components_.empty()) throw Error("interpolation needs at least one component");
    if (components_.size() != weights_.size()) throw Error("one weight per component required");
    double sum = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0)) throw Error("interpolation weights must be non-negative");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error("interpolation weights must sum to 1");
    for (const auto &c : components_) {
      if (!c) throw Error("null interpolation component");
      if (c->vocab_size() != components_[0]->vocab_size() || c->unpredicted() != components_[0]->unpredicted())
        throw Error("interpolation components must share one vocabulary");
    }
  }

  double prob(std::span<const WordId> history, WordId word) const override {
    double p = 0.0;
    for (std::size_t k = 0; k < components_.size(); ++k)
      if (weights_[k] > 0.0) p += weights_[k] * components_[k]->prob(history, word);
    return p;
  }

  std::size_t vocab_size() const override { return components_[0]->vocab_size(); }
  std::optional<WordId> unpredicted() const override { return components_[0]->unpredicted(); }
  std::size_t parameter_count() const override {
    std::size_t n = weights_.size();
    for (const auto &c : components_) n += c->parameter_count();
    return n;
  }
  const std::vector<double> &weights() const noexcept { return weights_; }
  const std::vector<std::shared_ptr<const LanguageModel>> &components() const noexcept { return components_; }

private:
  std::vector<std::shared_ptr<const LanguageModel>> components_;
  std::vector<double> weights_;
};

} // namespace classlm
