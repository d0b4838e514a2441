#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "classlm/common.hpp"
#include "classlm/models.hpp"
#include "classlm/vocabulary.hpp"

namespace classlm {

/// Neumaier-compensated sum in extended precision.
class CompensatedSum {
public:
  void add(long double x) {
    const long double t = sum_ + x;
    if (std::fabs(sum_) >= std::fabs(x)) comp_ += (sum_ - t) + x;
    else comp_ += (x - t) + sum_;
    sum_ = t;
  }
  long double value() const { return sum_ + comp_; }

private:
  long double sum_ = 0.0L;
  long double comp_ = 0.0L;
};

struct EvalOptions {
  /// Score the sentence-end token as a predicted word.
  bool include_sentence_end = true;
  bool per_sentence = false;
};

struct SentenceScore {
  std::size_t tokens = 0;
  double logprob = 0.0;
};

struct EvalReport {
  std::string model_id;
  std::size_t tokens = 0;
  double logprob = 0.0; ///< natural log
  double perplexity = 0.0;
  std::vector<SentenceScore> sentences;

  /// Aligned two-column table; perplexity to 4 significant figures.
  std::string table() const {
    char buf[160];
    std::string out;
    std::snprintf(buf, sizeof buf, "%-12s %s\n", "model", model_id.c_str());
    out += buf;
    std::snprintf(buf, sizeof buf, "%-12s %zu\n", "tokens", tokens);
    out += buf;
    std::snprintf(buf, sizeof buf, "%-12s %.6f\n", "logprob", logprob);
    out += buf;
    std::snprintf(buf, sizeof buf, "%-12s %.4g\n", "perplexity", perplexity);
    out += buf;
    return out;
  }

  /// "metric<TAB>value" lines.
  std::string metrics() const {
    std::string out;
    out += "model\t" + model_id + "\n";
    out += "tokens\t" + std::to_string(tokens) + "\n";
    out += "logprob\t" + detail::format_double(logprob) + "\n";
    out += "perplexity\t" + detail::format_double(perplexity) + "\n";
    for (std::size_t i = 0; i < sentences.size(); ++i)
      out += "sentence." + std::to_string(i) + ".logprob\t" + detail::format_double(sentences[i].logprob) + "\n";
    return out;
  }
};

/// Calls fn(history, word) for every scored event of the corpus.
template <typename Fn>
void for_each_event(const EncodedCorpus &corpus, WordId eos, bool include_sentence_end, Fn &&fn) {
  for (std::size_t si = 0; si < corpus.size(); ++si) {
    const auto &sentence = corpus[si];
    const std::size_t end = sentence.size() + (include_sentence_end ? 1 : 0);
    for (std::size_t pos = 0; pos < end; ++pos) {
      const WordId w = pos < sentence.size() ? sentence[pos] : eos;
      fn(si, pos, std::span<const WordId>(sentence.data(), pos), w);
    }
  }
}

/// PP = exp(-(1/N) sum ln p(w_i | c_i)). A zero probability is a model defect and raises.
inline EvalReport perplexity(const LanguageModel &model, const EncodedCorpus &corpus, WordId eos,
                             const EvalOptions &opts = {}, std::string model_id = "") {
  EvalReport report;
  report.model_id = std::move(model_id);
  CompensatedSum total;
  CompensatedSum sentence_sum;
  std::size_t sentence_tokens = 0;
  std::size_t current = 0;
  auto flush = [&] {
    if (opts.per_sentence) report.sentences.push_back({sentence_tokens, static_cast<double>(sentence_sum.value())});
    sentence_sum = {};
    sentence_tokens = 0;
  };
  for_each_event(corpus, eos, opts.include_sentence_end,
                 [&](std::size_t si, std::size_t pos, std::span<const WordId> history, WordId w) {
                   while (current < si) {
                     flush();
                     ++current;
                   }
                   const double p = model.prob(history, w);
                   if (!(p > 0.0))
                     throw Error("zero probability for word " + std::to_string(w) + " at sentence " +
                                 std::to_string(si) + ", position " + std::to_string(pos));
                   const long double lp = std::log(static_cast<long double>(p));
                   total.add(lp);
                   sentence_sum.add(lp);
                   ++sentence_tokens;
                   ++report.tokens;
                 });
  while (current < corpus.size()) {
    flush();
    ++current;
  }
  if (report.tokens == 0) throw Error("no events to evaluate");
  report.logprob = static_cast<double>(total.value());
  report.perplexity = static_cast<double>(std::exp(-total.value() / static_cast<long double>(report.tokens)));
  return report;
}

struct EmOptions {
  std::vector<double> init; ///< empty: uniform
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;
  bool include_sentence_end = true;
};

struct EmResult {
  std::vector<double> weights;
  /// Held-out log-likelihood at the initial weights and after each iteration.
  std::vector<double> loglik;
  std::size_t iterations = 0;
};

/// EM for mixture weights on held-out data:
///   lambda_k <- (1/N) sum_i lambda_k p_k(i) / sum_j lambda_j p_j(i).
inline EmResult tune_weights_em(std::span<const std::shared_ptr<const LanguageModel>> components,
                                const EncodedCorpus &heldout, WordId eos, const EmOptions &opts = {}) {
  const std::size_t K = components.size();
  if (K < 2) throw Error("weight tuning needs at least two components");
  std::vector<double> probs; // row-major event x component
  for_each_event(heldout, eos, opts.include_sentence_end,
                 [&](std::size_t, std::size_t, std::span<const WordId> history, WordId w) {
                   for (const auto &c : components) probs.push_back(c->prob(history, w));
                 });
  const std::size_t N = probs.size() / K;
  if (N == 0) throw Error("held-out data has no events");

  EmResult r;
  r.weights = opts.init.empty() ? std::vector<double>(K, 1.0 / static_cast<double>(K)) : opts.init;
  if (r.weights.size() != K) throw Error("one initial weight per component required");
  double sum = 0.0;
  for (double w : r.weights) {
    if (!(w >= 0.0)) throw Error("interpolation weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("interpolation weights must sum to 1");

  auto loglik = [&](const std::vector<double> &lambda) {
    CompensatedSum ll;
    for (std::size_t i = 0; i < N; ++i) {
      double mix = 0.0;
      for (std::size_t k = 0; k < K; ++k) mix += lambda[k] * probs[i * K + k];
      if (!(mix > 0.0)) throw Error("held-out event " + std::to_string(i) + " has zero mixture probability");
      ll.add(std::log(static_cast<long double>(mix)));
    }
    return static_cast<double>(ll.value());
  };

  r.loglik.push_back(loglik(r.weights));
  std::vector<CompensatedSum> acc(K);
  while (r.iterations < opts.max_iterations) {
    std::fill(acc.begin(), acc.end(), CompensatedSum{});
    for (std::size_t i = 0; i < N; ++i) {
      double mix = 0.0;
      for (std::size_t k = 0; k < K; ++k) mix += r.weights[k] * probs[i * K + k];
      for (std::size_t k = 0; k < K; ++k) acc[k].add(r.weights[k] * probs[i * K + k] / mix);
    }
    std::vector<double> next(K);
    double norm = 0.0;
    for (std::size_t k = 0; k < K; ++k) norm += next[k] = static_cast<double>(acc[k].value() / static_cast<long double>(N));
    double change = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      next[k] /= norm;
      change = std::max(change, std::abs(next[k] - r.weights[k]));
    }
    r.weights = std::move(next);
    ++r.iterations;
    r.loglik.push_back(loglik(r.weights));
    if (change < opts.tolerance) break;
  }
  return r;
}

} // namespace classlm
