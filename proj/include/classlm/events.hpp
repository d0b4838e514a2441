#pragma once

#include <algorithm>
#include <filesystem>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "classlm/common.hpp"
#include "classlm/feature_map.hpp"
#include "classlm/vocabulary.hpp"

namespace classlm {

/// Context values ordered farthest-first: (v_L, ..., v_1).
using ContextTuple = std::vector<FeatureId>;

/// One slot of a context spec string: kind letter and (negative) offset.
struct SlotSyntax {
  FeatureKind kind = FeatureKind::identity;
  int offset = -1;
  friend bool operator==(const SlotSyntax &, const SlotSyntax &) = default;
};

/// Parses "m:o,m:o,..." (farthest slot first), e.g. "w:-2,w:-1" or "t:-4,t:-3,t:-2,t:-1".
inline std::vector<SlotSyntax> parse_context_spec(std::string_view text) {
  std::vector<SlotSyntax> slots;
  for (auto part : detail::split_char(text, ',')) {
    auto f = detail::split_ws(part);
    if (f.size() != 1) throw Error("malformed context spec '" + std::string(text) + "'");
    auto item = f[0];
    auto colon = item.find(':');
    if (colon != 1) throw Error("malformed context slot '" + std::string(item) + "'");
    SlotSyntax s;
    s.kind = kind_from_letter(item[0]);
    s.offset = detail::parse_int<int>(item.substr(2), "context offset");
    if (s.offset >= 0) throw Error("context offsets must be negative in '" + std::string(text) + "'");
    if (!slots.empty() && s.offset <= slots.back().offset)
      throw Error("context slots must be listed farthest first in '" + std::string(text) + "'");
    slots.push_back(s);
  }
  if (slots.empty()) throw Error("empty context spec");
  return slots;
}

inline std::string format_context_spec(std::span<const SlotSyntax> slots) {
  std::string out;
  for (const auto &s : slots) {
    if (!out.empty()) out += ',';
    out += kind_letter(s.kind);
    out += ':' + std::to_string(s.offset);
  }
  return out;
}

/// Description of a slot as recorded in an event table: enough to validate and to reload the
/// mapper from `source`.
struct SlotInfo {
  int offset = -1;
  FeatureKind kind = FeatureKind::identity;
  std::size_t arity = 0;
  std::string source = "identity";
  friend bool operator==(const SlotInfo &, const SlotInfo &) = default;
};

struct ContextSlot {
  int offset = -1;
  std::shared_ptr<const FeatureMapper> mapper;
};

/// Ordered context slots, farthest first. Maps a sentence position to its context tuple.
class ContextSpec {
public:
  ContextSpec() = default;
  explicit ContextSpec(std::vector<ContextSlot> slots) : slots_(std::move(slots)) {
    if (slots_.empty()) throw Error("context spec needs at least one slot");
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (!slots_[i].mapper) throw Error("context slot without mapper");
      if (slots_[i].offset >= 0) throw Error("context offsets must be negative");
      if (i > 0 && slots_[i].offset <= slots_[i - 1].offset)
        throw Error("context slots must be ordered farthest first");
    }
  }

  std::size_t order() const noexcept { return slots_.size(); }
  const std::vector<ContextSlot> &slots() const noexcept { return slots_; }

  /// Context of the word at `pos` in `sentence` (pos == size() is the sentence end).
  /// Positions before the sentence start take the feature of `bos`.
  void context_at(std::span<const WordId> sentence, std::size_t pos, WordId bos, ContextTuple &out) const {
    out.resize(slots_.size());
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      const auto p = static_cast<std::ptrdiff_t>(pos) + slots_[i].offset;
      const WordId w = p < 0 ? bos : sentence[static_cast<std::size_t>(p)];
      out[i] = (*slots_[i].mapper)(w);
    }
  }

  std::vector<SlotInfo> slot_infos(const std::vector<std::string> &sources = {}) const {
    std::vector<SlotInfo> out;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      const auto &m = *slots_[i].mapper;
      SlotInfo info{slots_[i].offset, m.kind(), m.arity(), m.kind() == FeatureKind::identity ? "identity" : m.name()};
      if (i < sources.size()) info.source = sources[i];
      out.push_back(std::move(info));
    }
    return out;
  }

private:
  std::vector<ContextSlot> slots_;
};

/// Sparse joint counts N(c, w) of (context, next word) with both marginals.
///
/// Contexts get dense ids in lexicographic tuple order. Counts are stored twice, grouped by
/// context and grouped by word, since clustering needs both profiles.
class EventTable {
public:
  struct Entry {
    WordId word;
    Count count;
  };
  struct Posting {
    ContextId context;
    Count count;
  };
  struct Event {
    ContextTuple context;
    WordId word;
    Count count;
  };

  EventTable() = default;

  /// Aggregates duplicate (context, word) pairs; non-positive counts are rejected.
  static EventTable from_events(std::vector<SlotInfo> slots, std::size_t vocab_size, std::vector<Event> events) {
    EventTable t;
    t.slots_ = std::move(slots);
    t.vocab_size_ = vocab_size;
    const std::size_t order = t.slots_.size();
    if (order == 0) throw Error("event table needs at least one context slot");
    for (const auto &e : events) {
      if (e.context.size() != order) throw Error("context tuple length does not match spec");
      if (e.word >= vocab_size) throw Error("word id outside vocabulary");
      if (e.count <= 0) throw Error("event counts must be positive");
      for (std::size_t i = 0; i < order; ++i)
        if (e.context[i] >= t.slots_[i].arity) throw Error("context value outside slot arity");
    }
    std::sort(events.begin(), events.end(), [](const Event &a, const Event &b) {
      if (a.context != b.context) return a.context < b.context;
      return a.word < b.word;
    });

    t.word_counts_.assign(vocab_size, 0);
    t.context_offsets_.push_back(0);
    for (std::size_t i = 0; i < events.size();) {
      const auto &ctx = events[i].context;
      Count ctx_total = 0;
      while (i < events.size() && events[i].context == ctx) {
        const WordId w = events[i].word;
        Count c = 0;
        while (i < events.size() && events[i].context == ctx && events[i].word == w) c += events[i++].count;
        t.entries_.push_back({w, c});
        t.word_counts_[w] += c;
        ctx_total += c;
      }
      t.contexts_.insert(t.contexts_.end(), ctx.begin(), ctx.end());
      t.context_counts_.push_back(ctx_total);
      t.context_offsets_.push_back(t.entries_.size());
      t.total_ += ctx_total;
    }
    t.build_postings();
    return t;
  }

  std::size_t order() const noexcept { return slots_.size(); }
  const std::vector<SlotInfo> &slots() const noexcept { return slots_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::size_t num_contexts() const noexcept { return context_counts_.size(); }
  std::size_t num_entries() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  Count total() const noexcept { return total_; }

  std::span<const FeatureId> context(ContextId c) const {
    return {contexts_.data() + static_cast<std::size_t>(c) * order(), order()};
  }
  Count context_count(ContextId c) const { return context_counts_.at(c); }
  Count word_count(WordId w) const { return word_counts_.at(w); }
  const std::vector<Count> &context_counts() const noexcept { return context_counts_; }
  const std::vector<Count> &word_counts() const noexcept { return word_counts_; }

  std::span<const Entry> entries(ContextId c) const {
    return {entries_.data() + context_offsets_[c], context_offsets_[c + 1] - context_offsets_[c]};
  }
  std::span<const Posting> postings(WordId w) const {
    return {postings_.data() + word_offsets_[w], word_offsets_[w + 1] - word_offsets_[w]};
  }

  /// N(c, w), zero if unseen.
  Count count(ContextId c, WordId w) const {
    auto e = entries(c);
    auto it = std::lower_bound(e.begin(), e.end(), w, [](const Entry &x, WordId v) { return x.word < v; });
    return it != e.end() && it->word == w ? it->count : 0;
  }

  std::optional<ContextId> find_context(std::span<const FeatureId> tuple) const {
    if (tuple.size() != order()) return std::nullopt;
    std::size_t lo = 0, hi = num_contexts();
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      auto c = context(static_cast<ContextId>(mid));
      if (std::lexicographical_compare(c.begin(), c.end(), tuple.begin(), tuple.end())) lo = mid + 1;
      else hi = mid;
    }
    if (lo < num_contexts()) {
      auto c = context(static_cast<ContextId>(lo));
      if (std::equal(c.begin(), c.end(), tuple.begin(), tuple.end())) return static_cast<ContextId>(lo);
    }
    return std::nullopt;
  }

  friend bool operator==(const EventTable &a, const EventTable &b) {
    auto same_entries = [&] {
      if (a.entries_.size() != b.entries_.size()) return false;
      for (std::size_t i = 0; i < a.entries_.size(); ++i)
        if (a.entries_[i].word != b.entries_[i].word || a.entries_[i].count != b.entries_[i].count) return false;
      return true;
    };
    return a.slots_ == b.slots_ && a.vocab_size_ == b.vocab_size_ && a.contexts_ == b.contexts_ &&
           a.context_offsets_ == b.context_offsets_ && a.context_counts_ == b.context_counts_ &&
           a.word_counts_ == b.word_counts_ && a.total_ == b.total_ && same_entries();
  }

  /// Counts file: header lines, then "v_L ... v_1<TAB>word-id<TAB>count" sorted by tuple and
  /// word id.
  std::string serialize() const {
    std::string out = "#counts v1\n";
    out += "#vocab_size " + std::to_string(vocab_size_) + "\n";
    for (const auto &s : slots_)
      out += "#slot " + std::to_string(s.offset) + " " + kind_letter(s.kind) + " " + std::to_string(s.arity) + " " +
             s.source + "\n";
    std::string line;
    for (ContextId c = 0; c < num_contexts(); ++c) {
      std::string key;
      for (auto v : context(c)) {
        if (!key.empty()) key += ' ';
        key += std::to_string(v);
      }
      for (const auto &e : entries(c)) {
        out += key;
        out += '\t';
        out += std::to_string(e.word);
        out += '\t';
        out += std::to_string(e.count);
        out += '\n';
      }
    }
    return out;
  }

  void save(const std::filesystem::path &path) const { detail::atomic_write(path, serialize()); }

  static EventTable parse(const std::vector<std::string> &lines, const std::string &origin = "counts") {
    if (lines.empty() || lines[0] != "#counts v1") throw Error(origin + ": not a counts file");
    std::size_t vocab_size = 0;
    bool have_vocab = false;
    std::vector<SlotInfo> slots;
    std::vector<Event> events;
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto &line = lines[i];
      if (line.empty()) continue;
      if (line[0] == '#') {
        auto f = detail::split_ws(line);
        if (f[0] == "#vocab_size" && f.size() == 2) {
          vocab_size = detail::parse_int<std::size_t>(f[1], "vocab size");
          have_vocab = true;
        } else if (f[0] == "#slot" && f.size() == 5 && f[2].size() == 1) {
          slots.push_back({detail::parse_int<int>(f[1], "slot offset"), kind_from_letter(f[2][0]),
                           detail::parse_int<std::size_t>(f[3], "slot arity"), std::string(f[4])});
        } else {
          throw Error(origin + ": unknown header line '" + line + "'");
        }
        continue;
      }
      auto f = detail::split_char(line, '\t');
      if (f.size() != 3) throw Error(origin + ": malformed count line '" + line + "'");
      Event e;
      for (auto v : detail::split_ws(f[0])) e.context.push_back(detail::parse_int<FeatureId>(v, "context value"));
      e.word = detail::parse_int<WordId>(f[1], "word id");
      e.count = detail::parse_int<Count>(f[2], "count");
      events.push_back(std::move(e));
    }
    if (!have_vocab || slots.empty()) throw Error(origin + ": incomplete counts header");
    return from_events(std::move(slots), vocab_size, std::move(events));
  }

  static EventTable load(const std::filesystem::path &path) {
    return parse(detail::read_lines(path), path.string());
  }

private:
  void build_postings() {
    word_offsets_.assign(vocab_size_ + 1, 0);
    for (const auto &e : entries_) ++word_offsets_[e.word + 1];
    std::partial_sum(word_offsets_.begin(), word_offsets_.end(), word_offsets_.begin());
    postings_.resize(entries_.size());
    auto fill = word_offsets_;
    for (ContextId c = 0; c < num_contexts(); ++c)
      for (const auto &e : entries(c)) postings_[fill[e.word]++] = {c, e.count};
  }

  std::vector<SlotInfo> slots_;
  std::size_t vocab_size_ = 0;
  std::vector<FeatureId> contexts_;
  std::vector<std::size_t> context_offsets_{};
  std::vector<Entry> entries_;
  std::vector<Count> context_counts_;
  std::vector<Count> word_counts_;
  std::vector<std::size_t> word_offsets_;
  std::vector<Posting> postings_;
  Count total_ = 0;
};

/// One event per position and sentence, the sentence end included as a predicted word.
inline EventTable extract_events(const EncodedCorpus &corpus, const ContextSpec &spec, const Vocabulary &vocab,
                                 const std::vector<std::string> &sources = {}) {
  for (const auto &slot : spec.slots())
    if (slot.mapper->size() != vocab.size())
      throw Error("feature map '" + slot.mapper->name() + "' covers " + std::to_string(slot.mapper->size()) +
                  " words, vocabulary has " + std::to_string(vocab.size()));
  std::vector<EventTable::Event> events;
  events.reserve(token_count(corpus) + corpus.size());
  ContextTuple ctx;
  for (const auto &sentence : corpus) {
    for (std::size_t pos = 0; pos <= sentence.size(); ++pos) {
      spec.context_at(sentence, pos, vocab.bos(), ctx);
      events.push_back({ctx, pos < sentence.size() ? sentence[pos] : vocab.eos(), 1});
    }
  }
  return EventTable::from_events(spec.slot_infos(sources), vocab.size(), std::move(events));
}

struct ContextCensus {
  std::size_t distinct = 0;
  std::size_t below_min_count = 0;
  friend bool operator==(const ContextCensus &, const ContextCensus &) = default;
};

/// Number of distinct contexts, and how many of them occur fewer than `min_count` times.
inline ContextCensus distinct_context_count(const EventTable &table, Count min_count) {
  ContextCensus out;
  out.distinct = table.num_contexts();
  for (auto n : table.context_counts())
    if (n < min_count) ++out.below_min_count;
  return out;
}

} // namespace classlm
