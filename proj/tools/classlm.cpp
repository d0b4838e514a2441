// classlm: command-line driver for the class-based n-gram toolkit.
//
// Every output is written to a temporary and renamed into place. Paths recorded inside output
// files are relative to the output file, so a pipeline directory can be moved as a whole.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "classlm/classlm.hpp"

namespace fs = std::filesystem;
using namespace classlm;

namespace {

struct Options {
  // vocab build
  std::string corpus, out;
  std::size_t max_size = 20000;
  // counts collect
  std::string vocab, context = "w:-2,w:-1", tagmap, classmap;
  // cluster run
  std::string counts;
  ClusterParams params;
  bool tree = false;
  // classes export / classlm build
  std::string clustering;
  double discount = 0.5;
  // ngram train
  std::size_t order = 3;
  Count cutoff2 = 0, cutoff3 = 1;
  // interp tune
  std::string heldout;
  std::vector<std::string> components;
  std::size_t em_iterations = 100;
  double em_tolerance = 1e-6;
  // eval ppl
  std::string model, test;
  bool no_eos = false, per_sentence = false, metrics = false;
  // global
  std::string manifest;
  unsigned threads = 1;
};

std::string checked_source(const std::string &path, const std::string &file) {
  auto rel = detail::path_relative_to_file(path, file);
  if (rel.find_first_of(" \t") != std::string::npos) throw Error("feature map path must not contain spaces: " + path);
  return rel;
}

void vocab_build(const Options &o) {
  const auto corpus = read_corpus(o.corpus);
  const auto tokens = flatten(corpus);
  const auto v = build_vocabulary(tokens, o.max_size);
  v.save(o.out);
  std::cerr << "vocabulary: " << v.size() << " entries from " << tokens.size() << " tokens\n";
}

void counts_collect(const Options &o) {
  const auto vocab = Vocabulary::load(o.vocab);
  const auto syntax = parse_context_spec(o.context);
  std::map<FeatureKind, std::shared_ptr<const FeatureMapper>> mappers;
  std::map<FeatureKind, std::string> sources;
  auto need = [&](FeatureKind kind, const std::string &path, const char *flag) {
    if (mappers.count(kind)) return;
    if (path.empty()) throw Error(std::string("context spec uses a ") + kind_letter(kind) + " slot but " + flag + " is missing");
    mappers[kind] = std::make_shared<FeatureMapper>(load_feature_map(path, vocab, kind));
    sources[kind] = checked_source(path, o.out);
  };
  std::vector<ContextSlot> slots;
  std::vector<std::string> slot_sources;
  for (const auto &s : syntax) {
    if (s.kind == FeatureKind::identity) {
      if (!mappers.count(s.kind))
        mappers[s.kind] = std::make_shared<FeatureMapper>(FeatureMapper::identity(vocab.size()));
      sources[s.kind] = "identity";
    } else {
      need(s.kind, s.kind == FeatureKind::tag_map ? o.tagmap : o.classmap,
           s.kind == FeatureKind::tag_map ? "--tagmap" : "--classmap");
    }
    slots.push_back({s.offset, mappers[s.kind]});
    slot_sources.push_back(sources[s.kind]);
  }
  const ContextSpec spec(std::move(slots));
  const auto corpus = encode_corpus(read_corpus(o.corpus), vocab);
  const auto table = extract_events(corpus, spec, vocab, slot_sources);
  table.save(o.out);
  const auto census = distinct_context_count(table, o.params.min_count);
  std::cerr << "counts: " << table.total() << " events, " << census.distinct << " distinct contexts, "
            << census.below_min_count << " seen fewer than " << o.params.min_count << " times\n";
}

void cluster_run(const Options &o) {
  auto table = std::make_shared<const EventTable>(EventTable::load(o.counts));
  std::vector<LevelTrace> trace;
  ClusterHooks hooks;
  hooks.trace = &trace;
  Clustering cl = o.tree ? run_tree(table, build_suffix_tree(*table), o.params, hooks)
                         : run_flat(table, o.params, hooks);
  save_clustering(cl, o.out);
  for (const auto &t : trace) {
    std::fprintf(stderr, "level %zu: %zu iterations, %zu moves, F %.6f -> %.6f\n", t.level, t.iterations, t.moves,
                 t.criterion.front(), t.criterion.back());
    if (t.iterations > 3) std::fprintf(stderr, "warning: level %zu needed %zu iterations\n", t.level, t.iterations);
  }
}

void classes_export(const Options &o) {
  const auto vocab = Vocabulary::load(o.vocab);
  auto table = std::make_shared<const EventTable>(EventTable::load(o.counts));
  if (table->vocab_size() != vocab.size()) throw Error("counts do not match the vocabulary");
  const auto cl = load_clustering(o.clustering, table);
  detail::atomic_write(o.out, export_categories(cl).serialize(vocab));
}

void classlm_build(const Options &o) {
  // Load everything once so a bad combination fails here rather than at evaluation time.
  const auto vocab = Vocabulary::load(o.vocab);
  auto table = std::make_shared<const EventTable>(EventTable::load(o.counts));
  if (table->vocab_size() != vocab.size()) throw Error("counts do not match the vocabulary");
  ClassLM m(load_clustering(o.clustering, table), spec_from_table(*table, vocab, o.counts), vocab.bos(), o.discount);
  ClassModelFile f{detail::path_relative_to_file(o.vocab, o.out), detail::path_relative_to_file(o.counts, o.out),
                   detail::path_relative_to_file(o.clustering, o.out), o.discount};
  detail::atomic_write(o.out, f.serialize());
  std::cerr << "class model: " << m.parameter_count() << " parameters\n";
}

void ngram_train(const Options &o) {
  const auto vocab = Vocabulary::load(o.vocab);
  const auto corpus = encode_corpus(read_corpus(o.corpus), vocab);
  BackoffParams p;
  p.order = o.order;
  p.cutoffs = {0, o.cutoff2, o.cutoff3};
  p.discount = o.discount;
  const auto m = BackoffModel::train(NgramCounts::collect(corpus, o.order, vocab.bos(), vocab.eos()), p, vocab.size(),
                                     vocab.bos());
  detail::atomic_write(o.out, m.serialize(detail::path_relative_to_file(o.vocab, o.out)));
  std::cerr << "backoff model: " << m.parameter_count() << " parameters\n";
}

void interp_tune(const Options &o) {
  if (o.components.size() < 2) throw Error("interpolation needs at least two --component models");
  std::vector<LoadedModel> loaded;
  std::vector<std::shared_ptr<const LanguageModel>> models;
  for (const auto &c : o.components) {
    loaded.push_back(load_model(c));
    if (loaded.back().vocab->size() != loaded.front().vocab->size())
      throw Error("component '" + c + "' uses a different vocabulary");
    models.push_back(loaded.back().model);
  }
  const auto &vocab = *loaded.front().vocab;
  const auto heldout = encode_corpus(read_corpus(o.heldout), vocab);
  EmOptions em;
  em.max_iterations = o.em_iterations;
  em.tolerance = o.em_tolerance;
  em.include_sentence_end = !o.no_eos;
  const auto r = tune_weights_em(models, heldout, vocab.eos(), em);

  InterpModelFile f;
  f.vocab = detail::path_relative_to_file(loaded.front().vocab_path, o.out);
  for (std::size_t k = 0; k < models.size(); ++k)
    f.components.emplace_back(r.weights[k], detail::path_relative_to_file(o.components[k], o.out));
  detail::atomic_write(o.out, f.serialize());
  for (std::size_t k = 0; k < models.size(); ++k)
    std::printf("weight\t%s\t%s\n", o.components[k].c_str(), detail::format_double(r.weights[k]).c_str());
  std::printf("iterations\t%zu\n", r.iterations);
  std::printf("heldout_logprob\t%s\n", detail::format_double(r.loglik.back()).c_str());
}

void eval_ppl(const Options &o) {
  const auto m = load_model(o.model);
  const auto test = encode_corpus(read_corpus(o.test), *m.vocab);
  EvalOptions opts;
  opts.include_sentence_end = !o.no_eos;
  opts.per_sentence = o.per_sentence;
  const auto r = perplexity(*m.model, test, m.vocab->eos(), opts, fs::path(o.model).filename().string());
  std::fputs(o.metrics ? r.metrics().c_str() : r.table().c_str(), stdout);
  if (o.per_sentence && !o.metrics)
    for (std::size_t i = 0; i < r.sentences.size(); ++i)
      std::printf("sentence %zu: %zu tokens, logprob %.6f\n", i, r.sentences[i].tokens, r.sentences[i].logprob);
}

std::uint64_t fnv1a(const std::string &bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) h = (h ^ c) * 1099511628211ull;
  return h;
}

// Every argument verbatim, plus a checksum of each argument that names an existing file
// (inputs, and outputs as written).
void write_manifest(const std::string &path, int argc, char **argv) {
  std::string out = "#manifest v1\n";
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    out += "arg\t" + arg + "\n";
    std::error_code ec;
    if (fs::is_regular_file(arg, ec) && fs::path(arg) != fs::path(path)) {
      char buf[24];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(detail::read_file(arg))));
      out += "file\t" + arg + "\t" + buf + "\n";
    }
  }
  detail::atomic_write(path, out);
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Class-based n-gram language models with tree-based exchange clustering."};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--manifest", o.manifest, "Record flags and input checksums to this file");
  app.add_option("--threads", o.threads, "Upper bound on worker threads")->check(CLI::PositiveNumber);

  auto existing = CLI::ExistingFile;
  std::function<void()> action;

  auto *vocab = app.add_subcommand("vocab", "Vocabulary files")->require_subcommand(1);
  auto *vb = vocab->add_subcommand("build", "Build a vocabulary from a corpus");
  vb->add_option("--corpus", o.corpus)->required()->check(existing);
  vb->add_option("--max-size", o.max_size, "Keep this many most frequent words")->capture_default_str();
  vb->add_option("--out", o.out)->required();
  vb->callback([&] { action = [&] { vocab_build(o); }; });

  auto *counts = app.add_subcommand("counts", "Context/word event counts")->require_subcommand(1);
  auto *cc = counts->add_subcommand("collect", "Collect counts under a context spec");
  cc->add_option("--vocab", o.vocab)->required()->check(existing);
  cc->add_option("--corpus", o.corpus)->required()->check(existing);
  cc->add_option("--context", o.context, "Slots m:o, farthest first (m in w,t,g)")->capture_default_str();
  cc->add_option("--tagmap", o.tagmap, "word<TAB>tag map for t slots")->check(existing);
  cc->add_option("--classmap", o.classmap, "word<TAB>class map for g slots")->check(existing);
  cc->add_option("--min-count", o.params.min_count, "Threshold for the rare-context report")->capture_default_str();
  cc->add_option("--out", o.out)->required();
  cc->callback([&] { action = [&] { counts_collect(o); }; });

  auto *cluster = app.add_subcommand("cluster", "Exchange clustering")->require_subcommand(1);
  auto *cr = cluster->add_subcommand("run", "Cluster contexts into states and words into categories");
  cr->add_option("--counts", o.counts)->required()->check(existing);
  cr->add_option("--states", o.params.num_states)->capture_default_str();
  cr->add_option("--categories", o.params.num_categories)->capture_default_str();
  cr->add_flag("--tree", o.tree, "Move suffix-tree groups level by level");
  cr->add_option("--min-count", o.params.min_count)->capture_default_str();
  cr->add_option("--conv", o.params.conv_threshold, "Stop below this relative improvement")->capture_default_str();
  cr->add_option("--max-iter", o.params.max_iterations)->capture_default_str();
  cr->add_option("--out", o.out)->required();
  cr->callback([&] { action = [&] { o.params.validate(); cluster_run(o); }; });

  auto *classes = app.add_subcommand("classes", "Word categories")->require_subcommand(1);
  auto *ce = classes->add_subcommand("export", "Write the category map as a class map");
  ce->add_option("--clustering", o.clustering)->required()->check(existing);
  ce->add_option("--counts", o.counts)->required()->check(existing);
  ce->add_option("--vocab", o.vocab)->required()->check(existing);
  ce->add_option("--out", o.out)->required();
  ce->callback([&] { action = [&] { classes_export(o); }; });

  auto *classlm = app.add_subcommand("classlm", "Clustered language model")->require_subcommand(1);
  auto *cb = classlm->add_subcommand("build", "Write a clustered model file");
  cb->add_option("--vocab", o.vocab)->required()->check(existing);
  cb->add_option("--counts", o.counts)->required()->check(existing);
  cb->add_option("--clustering", o.clustering)->required()->check(existing);
  cb->add_option("--discount", o.discount, "State-to-category discount")->capture_default_str();
  cb->add_option("--out", o.out)->required();
  cb->callback([&] { action = [&] { classlm_build(o); }; });

  auto *ngram = app.add_subcommand("ngram", "Backoff n-gram model")->require_subcommand(1);
  auto *nt = ngram->add_subcommand("train", "Train an absolute-discounting backoff model");
  nt->add_option("--vocab", o.vocab)->required()->check(existing);
  nt->add_option("--corpus", o.corpus)->required()->check(existing);
  nt->add_option("--order", o.order)->capture_default_str()->check(CLI::Range(1, 3));
  nt->add_option("--cutoff2", o.cutoff2, "Drop bigrams seen at most this often")->capture_default_str();
  nt->add_option("--cutoff3", o.cutoff3, "Drop trigrams seen at most this often")->capture_default_str();
  nt->add_option("--discount", o.discount)->capture_default_str();
  nt->add_option("--out", o.out)->required();
  nt->callback([&] { action = [&] { ngram_train(o); }; });

  auto *interp = app.add_subcommand("interp", "Linear interpolation")->require_subcommand(1);
  auto *it = interp->add_subcommand("tune", "Tune mixture weights with EM on held-out text");
  it->add_option("--heldout", o.heldout)->required()->check(existing);
  it->add_option("--component", o.components, "Component model file (repeat)")->required()->check(existing);
  it->add_option("--max-iter", o.em_iterations)->capture_default_str();
  it->add_option("--tol", o.em_tolerance)->capture_default_str();
  it->add_flag("--no-eos", o.no_eos, "Do not score sentence ends");
  it->add_option("--out", o.out)->required();
  it->callback([&] { action = [&] { interp_tune(o); }; });

  auto *eval = app.add_subcommand("eval", "Evaluation")->require_subcommand(1);
  auto *ep = eval->add_subcommand("ppl", "Perplexity of a model on a test corpus");
  ep->add_option("--model", o.model)->required()->check(existing);
  ep->add_option("--test", o.test)->required()->check(existing);
  ep->add_flag("--no-eos", o.no_eos, "Do not score sentence ends");
  ep->add_flag("--per-sentence", o.per_sentence);
  ep->add_flag("--metrics", o.metrics, "Print metric<TAB>value lines");
  ep->callback([&] { action = [&] { eval_ppl(o); }; });

  CLI11_PARSE(app, argc, argv);
  try {
    action();
    if (!o.manifest.empty()) write_manifest(o.manifest, argc, argv);
  } catch (const std::exception &e) {
    std::fprintf(stderr, "classlm: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
