#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "classlm/common.hpp"
#include "classlm/context_tree.hpp"
#include "classlm/events.hpp"
#include "classlm/feature_map.hpp"

namespace classlm {

struct ClusterParams {
  std::size_t num_states = 2000;
  std::size_t num_categories = 2000;
  /// Elements (words, contexts, tree nodes) seen fewer times than this are never moved.
  Count min_count = 6;
  /// An iteration whose relative criterion gain falls below this ends the loop.
  double conv_threshold = 0.01;
  std::size_t max_iterations = 20;

  void validate() const {
    if (num_states < 1) throw Error("number of states must be at least 1");
    if (num_categories < 1) throw Error("number of categories must be at least 1");
    if (min_count < 1) throw Error("min count must be positive");
    if (!(conv_threshold > 0.0 && conv_threshold < 1.0)) throw Error("convergence threshold must lie in (0, 1)");
    if (max_iterations < 1) throw Error("max iterations must be positive");
  }
};

/// A set of contexts that always moves as one unit (a tree node, or a single context).
struct ContextGroup {
  std::span<const ContextId> contexts;
};

using Element = std::variant<WordId, ContextGroup>;

struct MoveDelta {
  Element element;
  std::uint32_t source = 0;
  std::uint32_t target = 0;
  double delta = 0.0;
};

/// Per-cluster count profile of one element: for a word, n_w(s) over states; for a context
/// group, n(g) over categories. Only nonzero cells are listed.
struct Profile {
  std::vector<std::pair<std::uint32_t, Count>> cells;
  Count total = 0;
  std::uint32_t source = 0;
};

/// State map S over contexts and category map G over words, with the sufficient statistics
/// N(s,g), N(s), N(g) and the cached criterion
///
///   F = sum_{s,g} f(N(s,g)) - sum_s f(N(s)) - sum_g f(N(g)),   f(x) = x ln x.
///
/// F is the training log-likelihood of p(g|s) p(w|g) with relative-frequency estimates, minus
/// the assignment-independent sum_w f(N(w)).
class Clustering {
public:
  Clustering() = default;

  static Clustering from_assignment(std::shared_ptr<const EventTable> table, std::size_t num_states,
                                    std::size_t num_categories, std::vector<StateId> states,
                                    std::vector<CategoryId> categories, ClusterParams params = {}) {
    if (!table) throw Error("clustering needs an event table");
    if (states.size() != table->num_contexts()) throw Error("state map must cover every observed context");
    if (categories.size() != table->vocab_size()) throw Error("category map must cover the vocabulary");
    for (auto s : states)
      if (s >= num_states) throw Error("state id out of range");
    for (auto g : categories)
      if (g >= num_categories) throw Error("category id out of range");
    params.num_states = num_states;
    params.num_categories = num_categories;
    Clustering c;
    c.table_ = std::move(table);
    c.params_ = params;
    c.states_ = std::move(states);
    c.categories_ = std::move(categories);
    c.recount();
    return c;
  }

  const EventTable &table() const { return *table_; }
  const std::shared_ptr<const EventTable> &table_ptr() const noexcept { return table_; }
  const ClusterParams &params() const noexcept { return params_; }
  std::size_t num_states() const noexcept { return params_.num_states; }
  std::size_t num_categories() const noexcept { return params_.num_categories; }

  StateId state_of(ContextId c) const { return states_.at(c); }
  CategoryId category_of(WordId w) const { return categories_.at(w); }
  const std::vector<StateId> &states() const noexcept { return states_; }
  const std::vector<CategoryId> &categories() const noexcept { return categories_; }

  Count joint(StateId s, CategoryId g) const { return joint_[index(s, g)]; }
  Count state_count(StateId s) const { return state_counts_.at(s); }
  Count category_count(CategoryId g) const { return category_counts_.at(g); }
  const std::vector<Count> &state_counts() const noexcept { return state_counts_; }
  const std::vector<Count> &category_counts() const noexcept { return category_counts_; }

  /// Cached criterion, maintained incrementally across moves.
  double criterion() const noexcept { return criterion_; }

  /// Criterion evaluated from the current statistics.
  double recompute_criterion() const {
    double f = 0.0;
    for (auto n : joint_) f += xlogx(n);
    for (auto n : state_counts_) f -= xlogx(n);
    for (auto n : category_counts_) f -= xlogx(n);
    return f;
  }

  Profile word_profile(WordId w) const {
    Profile p;
    p.source = categories_.at(w);
    std::vector<Count> acc(num_states(), 0);
    std::vector<std::uint32_t> touched;
    for (const auto &post : table_->postings(w)) {
      const auto s = states_[post.context];
      if (acc[s] == 0) touched.push_back(s);
      acc[s] += post.count;
      p.total += post.count;
    }
    std::sort(touched.begin(), touched.end());
    for (auto s : touched) p.cells.emplace_back(s, acc[s]);
    return p;
  }

  /// Throws "fragmented node" unless every context in the group shares one state.
  Profile group_profile(std::span<const ContextId> contexts) const {
    if (contexts.empty()) throw Error("empty context group");
    Profile p;
    p.source = states_.at(contexts.front());
    std::vector<Count> acc(num_categories(), 0);
    std::vector<std::uint32_t> touched;
    for (auto c : contexts) {
      if (states_.at(c) != p.source) throw Error("fragmented node");
      for (const auto &e : table_->entries(c)) {
        const auto g = categories_[e.word];
        if (acc[g] == 0) touched.push_back(g);
        acc[g] += e.count;
        p.total += e.count;
      }
    }
    std::sort(touched.begin(), touched.end());
    for (auto g : touched) p.cells.emplace_back(g, acc[g]);
    return p;
  }

  /// F(after) - F(before) for moving the word behind `p` to category `target`.
  double delta_word(const Profile &p, CategoryId target) const {
    if (target == p.source) return 0.0;
    const auto from = p.source;
    double d = 0.0;
    for (const auto &[s, n] : p.cells) {
      const Count a = joint(s, from), b = joint(s, target);
      d += xlogx(a - n) - xlogx(a) + xlogx(b + n) - xlogx(b);
    }
    const Count A = category_counts_[from], B = category_counts_[target];
    d -= xlogx(A - p.total) - xlogx(A) + xlogx(B + p.total) - xlogx(B);
    return d;
  }

  /// F(after) - F(before) for moving the group behind `p` to state `target`.
  double delta_group(const Profile &p, StateId target) const {
    if (target == p.source) return 0.0;
    const auto from = p.source;
    double d = 0.0;
    for (const auto &[g, n] : p.cells) {
      const Count a = joint(from, g), b = joint(target, g);
      d += xlogx(a - n) - xlogx(a) + xlogx(b + n) - xlogx(b);
    }
    const Count A = state_counts_[from], B = state_counts_[target];
    d -= xlogx(A - p.total) - xlogx(A) + xlogx(B + p.total) - xlogx(B);
    return d;
  }

  double delta_move_word(WordId w, CategoryId target) const {
    if (target >= num_categories()) throw Error("target category out of range");
    if (target == categories_.at(w)) return 0.0;
    return delta_word(word_profile(w), target);
  }

  double delta_move_context_group(std::span<const ContextId> contexts, StateId target) const {
    if (target >= num_states()) throw Error("target state out of range");
    auto p = group_profile(contexts);
    return delta_group(p, target);
  }

  /// Moves the element and adds the move's delta to the cached criterion.
  void apply(const MoveDelta &move) {
    if (const auto *w = std::get_if<WordId>(&move.element)) apply_word(*w, word_profile(*w), move.target, move.delta);
    else {
      const auto &group = std::get<ContextGroup>(move.element);
      apply_group(group.contexts, group_profile(group.contexts), move.target, move.delta);
    }
  }

  void apply_word(WordId w, const Profile &p, CategoryId target, double delta) {
    if (target >= num_categories()) throw Error("target category out of range");
    if (target == p.source) return;
    for (const auto &[s, n] : p.cells) {
      joint_[index(s, p.source)] -= n;
      joint_[index(s, target)] += n;
    }
    category_counts_[p.source] -= p.total;
    category_counts_[target] += p.total;
    categories_[w] = target;
    criterion_ += delta;
  }

  void apply_group(std::span<const ContextId> contexts, const Profile &p, StateId target, double delta) {
    if (target >= num_states()) throw Error("target state out of range");
    if (target == p.source) return;
    for (const auto &[g, n] : p.cells) {
      joint_[index(p.source, g)] -= n;
      joint_[index(target, g)] += n;
    }
    state_counts_[p.source] -= p.total;
    state_counts_[target] += p.total;
    for (auto c : contexts) states_[c] = target;
    criterion_ += delta;
  }

  /// Rebuilds all statistics and the criterion from the event table.
  void recount() {
    joint_.assign(num_states() * num_categories(), 0);
    state_counts_.assign(num_states(), 0);
    category_counts_.assign(num_categories(), 0);
    for (ContextId c = 0; c < table_->num_contexts(); ++c) {
      const auto s = states_[c];
      for (const auto &e : table_->entries(c)) {
        const auto g = categories_[e.word];
        joint_[index(s, g)] += e.count;
        state_counts_[s] += e.count;
        category_counts_[g] += e.count;
      }
    }
    criterion_ = recompute_criterion();
  }

  /// Number of nonzero N(s,g) cells, i.e. the stored parameters of p(g|s).
  std::size_t nonzero_joint_cells() const {
    return static_cast<std::size_t>(std::count_if(joint_.begin(), joint_.end(), [](Count n) { return n > 0; }));
  }

private:
  std::size_t index(StateId s, CategoryId g) const { return static_cast<std::size_t>(s) * num_categories() + g; }

  std::shared_ptr<const EventTable> table_;
  ClusterParams params_;
  std::vector<StateId> states_;
  std::vector<CategoryId> categories_;
  std::vector<Count> joint_;
  std::vector<Count> state_counts_;
  std::vector<Count> category_counts_;
  double criterion_ = 0.0;
};

inline double criterion(const Clustering &c) { return c.criterion(); }

namespace detail {

/// Rank assignment: the k-1 largest items (count descending, ties by index) get singleton
/// clusters 0..k-2, everything else shares cluster k-1.
inline std::vector<std::uint32_t> rank_assignment(const std::vector<Count> &counts, std::size_t k) {
  std::vector<std::uint32_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] > counts[b]; });
  std::vector<std::uint32_t> out(counts.size(), static_cast<std::uint32_t>(k - 1));
  for (std::size_t r = 0; r + 1 < k && r < order.size(); ++r) out[order[r]] = static_cast<std::uint32_t>(r);
  return out;
}

} // namespace detail

/// Initial S and G by frequency rank. With `groups`, contexts are ranked group-wise and every
/// context inherits its group's state, which keeps the groups coherent for group moves.
inline Clustering init_clustering(std::shared_ptr<const EventTable> table, const ClusterParams &params,
                                  std::span<const ContextTree::Node> groups = {}) {
  params.validate();
  if (!table || table->empty()) throw Error("cannot cluster an empty event table");
  if (params.num_categories > table->vocab_size())
    throw Error("more categories (" + std::to_string(params.num_categories) + ") than vocabulary words (" +
                std::to_string(table->vocab_size()) + ")");
  auto categories = detail::rank_assignment(table->word_counts(), params.num_categories);
  std::vector<StateId> states;
  if (groups.empty()) {
    states = detail::rank_assignment(table->context_counts(), params.num_states);
  } else {
    std::vector<Count> agg;
    for (const auto &n : groups) agg.push_back(n.aggregate);
    auto group_states = detail::rank_assignment(agg, params.num_states);
    states.assign(table->num_contexts(), 0);
    for (std::size_t i = 0; i < groups.size(); ++i)
      for (auto c : groups[i].contexts) states.at(c) = group_states[i];
  }
  return Clustering::from_assignment(std::move(table), params.num_states, params.num_categories, std::move(states),
                                     std::move(categories), params);
}

/// Relative-improvement stopping rule: stop after the first iteration whose gain
/// (F_end - F_start) / |F_start| is below the threshold, or at the iteration cap.
class ConvergenceMonitor {
public:
  ConvergenceMonitor(double threshold, std::size_t max_iterations)
      : threshold_(threshold), max_iterations_(max_iterations) {}

  /// Records one finished iteration; true if another one should run.
  bool record(double f_start, double f_end) {
    ++iterations_;
    last_ = f_start == 0.0 ? 0.0 : (f_end - f_start) / std::abs(f_start);
    if (last_ < threshold_) return false;
    return iterations_ < max_iterations_;
  }

  std::size_t iterations() const noexcept { return iterations_; }
  double last_relative_improvement() const noexcept { return last_; }

private:
  double threshold_;
  std::size_t max_iterations_;
  std::size_t iterations_ = 0;
  double last_ = 0.0;
};

/// What the exchange loop decided for one visited (eligible) element.
struct MoveDecision {
  std::size_t level = 0;
  bool is_word = true;
  std::uint32_t element = 0; ///< word id, or node index within the level
  std::uint32_t source = 0;
  std::uint32_t target = 0;  ///< == source when no move improves F
  double delta = 0.0;
  bool applied = false;
};

struct LevelTrace {
  std::size_t level = 0;
  std::size_t iterations = 0;
  std::size_t moves = 0;
  std::vector<double> criterion; ///< F before the first iteration and after each one
};

struct ClusterHooks {
  /// Called with the clustering as it was before the decision took effect.
  std::function<void(const Clustering &, const MoveDecision &)> on_decision;
  std::vector<LevelTrace> *trace = nullptr;
};

namespace detail {

/// Greedy exchange over the words and the given context groups until the convergence rule
/// fires. Groups must be state-coherent.
inline LevelTrace exchange_until_converged(Clustering &cl, std::span<const ContextTree::Node> groups,
                                           std::size_t level, const ClusterHooks &hooks) {
  const auto &table = cl.table();
  const auto &params = cl.params();

  struct Item {
    Count count;
    bool is_word;
    std::uint32_t id;
  };
  std::vector<Item> items;
  for (WordId w = 0; w < table.vocab_size(); ++w)
    if (table.word_count(w) >= params.min_count) items.push_back({table.word_count(w), true, w});
  for (std::size_t i = 0; i < groups.size(); ++i)
    if (groups[i].aggregate >= params.min_count)
      items.push_back({groups[i].aggregate, false, static_cast<std::uint32_t>(i)});
  std::stable_sort(items.begin(), items.end(), [](const Item &a, const Item &b) { return a.count > b.count; });

  LevelTrace trace;
  trace.level = level;
  trace.criterion.push_back(cl.criterion());
  ConvergenceMonitor monitor(params.conv_threshold, params.max_iterations);
  for (;;) {
    const double f_start = cl.criterion();
    for (const auto &item : items) {
      MoveDecision d;
      d.level = level;
      d.is_word = item.is_word;
      d.element = item.id;
      Profile p;
      std::size_t targets = 0;
      if (item.is_word) {
        p = cl.word_profile(item.id);
        targets = cl.num_categories();
      } else {
        p = cl.group_profile(groups[item.id].contexts);
        targets = cl.num_states();
      }
      d.source = d.target = p.source;
      for (std::uint32_t t = 0; t < targets; ++t) {
        if (t == p.source) continue;
        const double delta = item.is_word ? cl.delta_word(p, t) : cl.delta_group(p, t);
        if (delta > d.delta) {
          d.delta = delta;
          d.target = t;
        }
      }
      d.applied = d.target != d.source;
      if (hooks.on_decision) hooks.on_decision(cl, d);
      if (!d.applied) continue;
      if (item.is_word) cl.apply_word(item.id, p, d.target, d.delta);
      else cl.apply_group(groups[item.id].contexts, p, d.target, d.delta);
      ++trace.moves;
    }
    const double f_end = cl.criterion();
    trace.criterion.push_back(f_end);
    if (!monitor.record(f_start, f_end)) break;
  }
  trace.iterations = monitor.iterations();
  return trace;
}

inline std::vector<ContextTree::Node> singleton_groups(const EventTable &table) {
  std::vector<ContextTree::Node> out(table.num_contexts());
  for (ContextId c = 0; c < table.num_contexts(); ++c) {
    out[c].key.assign(table.context(c).begin(), table.context(c).end());
    out[c].aggregate = table.context_count(c);
    out[c].contexts = {c};
  }
  return out;
}

} // namespace detail

/// Flat exchange clustering: words and individual contexts.
inline Clustering run_flat(std::shared_ptr<const EventTable> table, const ClusterParams &params,
                           const ClusterHooks &hooks = {}) {
  auto cl = init_clustering(table, params);
  const auto groups = detail::singleton_groups(*table);
  auto trace = detail::exchange_until_converged(cl, groups, table->order(), hooks);
  if (hooks.trace) hooks.trace->push_back(std::move(trace));
  return cl;
}

/// Tree-based exchange clustering: level by level from the coarsest suffix groups down to the
/// individual contexts, words moving at every level. Group eligibility uses node aggregates.
inline Clustering run_tree(std::shared_ptr<const EventTable> table, const ContextTree &tree,
                           const ClusterParams &params, const ClusterHooks &hooks = {}) {
  if (tree.depth() != table->order()) throw Error("context tree depth does not match the event table");
  if (tree.root().aggregate != table->total()) throw Error("context tree was built from a different table");
  auto cl = init_clustering(table, params, tree.nodes_at_level(1));
  for (std::size_t level = 1; level <= tree.depth(); ++level) {
    auto trace = detail::exchange_until_converged(cl, tree.nodes_at_level(level), level, hooks);
    if (hooks.trace) hooks.trace->push_back(std::move(trace));
  }
  return cl;
}

/// The category map as a class-map feature, usable as a context slot.
inline FeatureMapper export_categories(const Clustering &cl, std::string name = "classes") {
  std::vector<FeatureId> table(cl.categories().begin(), cl.categories().end());
  return FeatureMapper(std::move(name), FeatureKind::class_map, std::move(table), cl.num_categories());
}

/// Clustering file: header, then "G" section ("word-id<TAB>category") and "S" section
/// ("v_L ... v_1<TAB>state").
inline std::string serialize_clustering(const Clustering &cl) {
  const auto &p = cl.params();
  std::string out = "#clustering v1\n";
  out += "#states " + std::to_string(cl.num_states()) + "\n";
  out += "#categories " + std::to_string(cl.num_categories()) + "\n";
  out += "#criterion " + detail::format_double(cl.criterion()) + "\n";
  out += "#params min_count=" + std::to_string(p.min_count) + " conv=" + detail::format_double(p.conv_threshold) +
         " max_iterations=" + std::to_string(p.max_iterations) + "\n";
  out += "G\n";
  for (WordId w = 0; w < cl.categories().size(); ++w)
    out += std::to_string(w) + "\t" + std::to_string(cl.category_of(w)) + "\n";
  out += "S\n";
  const auto &table = cl.table();
  for (ContextId c = 0; c < table.num_contexts(); ++c) {
    std::string key;
    for (auto v : table.context(c)) {
      if (!key.empty()) key += ' ';
      key += std::to_string(v);
    }
    out += key + "\t" + std::to_string(cl.state_of(c)) + "\n";
  }
  return out;
}

inline void save_clustering(const Clustering &cl, const std::filesystem::path &path) {
  detail::atomic_write(path, serialize_clustering(cl));
}

/// Reads a clustering file against the event table it was computed from.
inline Clustering parse_clustering(const std::vector<std::string> &lines, std::shared_ptr<const EventTable> table,
                                   const std::string &origin = "clustering") {
  if (lines.empty() || lines[0] != "#clustering v1") throw Error(origin + ": not a clustering file");
  std::size_t ks = 0, kg = 0;
  ClusterParams params;
  std::size_t i = 1;
  for (; i < lines.size() && !lines[i].empty() && lines[i][0] == '#'; ++i) {
    auto f = detail::split_ws(lines[i]);
    if (f[0] == "#states" && f.size() == 2) ks = detail::parse_int<std::size_t>(f[1], "state count");
    else if (f[0] == "#categories" && f.size() == 2) kg = detail::parse_int<std::size_t>(f[1], "category count");
    else if (f[0] == "#params") {
      for (std::size_t k = 1; k < f.size(); ++k) {
        auto kv = detail::split_char(f[k], '=');
        if (kv.size() != 2) throw Error(origin + ": malformed params");
        if (kv[0] == "min_count") params.min_count = detail::parse_int<Count>(kv[1], "min count");
        else if (kv[0] == "conv") params.conv_threshold = detail::parse_double(kv[1], "conv");
        else if (kv[0] == "max_iterations") params.max_iterations = detail::parse_int<std::size_t>(kv[1], "max iterations");
      }
    }
  }
  if (ks == 0 || kg == 0) throw Error(origin + ": missing cluster counts");
  if (i >= lines.size() || lines[i] != "G") throw Error(origin + ": missing G section");
  std::vector<CategoryId> categories(table->vocab_size(), kg);
  for (++i; i < lines.size() && lines[i] != "S"; ++i) {
    auto f = detail::split_char(lines[i], '\t');
    if (f.size() != 2) throw Error(origin + ": malformed G line '" + lines[i] + "'");
    auto w = detail::parse_int<WordId>(f[0], "word id");
    if (w >= categories.size()) throw Error(origin + ": word id outside vocabulary");
    categories[w] = detail::parse_int<CategoryId>(f[1], "category");
  }
  if (i >= lines.size()) throw Error(origin + ": missing S section");
  std::vector<StateId> states(table->num_contexts(), static_cast<StateId>(ks));
  for (++i; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = detail::split_char(lines[i], '\t');
    if (f.size() != 2) throw Error(origin + ": malformed S line '" + lines[i] + "'");
    ContextTuple tuple;
    for (auto v : detail::split_ws(f[0])) tuple.push_back(detail::parse_int<FeatureId>(v, "context value"));
    auto c = table->find_context(tuple);
    if (!c) throw Error(origin + ": context '" + std::string(f[0]) + "' not in the event table");
    states[*c] = detail::parse_int<StateId>(f[1], "state");
  }
  return Clustering::from_assignment(std::move(table), ks, kg, std::move(states), std::move(categories), params);
}

inline Clustering load_clustering(const std::filesystem::path &path, std::shared_ptr<const EventTable> table) {
  return parse_clustering(detail::read_lines(path), std::move(table), path.string());
}

} // namespace classlm
