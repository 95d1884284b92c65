#include "concept_lens/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "concept_lens/decomposer.hpp"
#include "concept_lens/errors.hpp"
#include "concept_lens/evaluator.hpp"
#include "concept_lens/log.hpp"
#include "concept_lens/parallel.hpp"
#include "concept_lens/projection.hpp"
#include "concept_lens/store.hpp"
#include "concept_lens/svg_chart.hpp"
#include "concept_lens/synth.hpp"
#include "concept_lens/vocab.hpp"

namespace concept_lens::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string out;
};

struct SynthArgs {
  SynthConfig cfg;
};

struct BuildVocabArgs {
  std::string construction = "baseline";
  std::string tags;
  std::string embeddings;
  std::string blocklist;
  std::string wordlist;
  std::string synonyms;
  std::string vocab_id;
  std::size_t vocab_size = 0;
  std::size_t pool = 0;
  bool propose_synonyms = false;
};

struct SolverArgs {
  double lambda = 0.05;
  int max_sweeps = 10000;
  double tolerance = 1e-6;

  SolverConfig config() const {
    SolverConfig cfg;
    cfg.lambda = lambda;
    cfg.max_sweeps = max_sweeps;
    cfg.tolerance = tolerance;
    return cfg;
  }
};

struct DecomposeArgs {
  std::string vocab;
  std::string embeddings;
  std::string manifest;
  std::string projection;
  std::size_t top_k = 5;
};

struct SweepArgs {
  std::vector<std::string> vocabs;
  std::string embeddings;
  std::string task;
  std::string lambda_grid;
  std::string manifest;
  std::string prompts;
  std::string captions;
  std::string template_text = kDefaultPromptTemplate;
  std::string metric;
  std::string direction;
  std::string split;
};

struct ClassifyArgs {
  std::string vocab;
  std::string embeddings;
  std::string manifest;
  std::string prompts;
  std::string projection;
  std::string template_text = kDefaultPromptTemplate;
  std::string metric = "accuracy";
  std::string split;
  int bootstrap = 1000;
};

struct RetrieveArgs {
  std::string vocab;
  std::string embeddings;
  std::string manifest;
  std::string captions;
  std::string direction = "text-audio";
  std::string split;
  int bootstrap = 1000;
};

struct FinetuneArgs {
  std::string embeddings;
  std::string manifest;
  std::string prompts;
  std::string vocab;
  std::string template_text = kDefaultPromptTemplate;
  std::string split = "dev";
  std::string eval_split = "eval";
  std::string dataset_id;
  TrainConfig train;
};

struct ReportArgs {
  std::vector<std::string> sweeps;
  std::string metric_label = "metric";
  std::string title = "sweep";
};

void print_summary(std::ostream& out, const json& summary) { out << summary.dump() << '\n'; }

fs::path require_out(const Common& common) {
  if (common.out.empty()) throw ValidationError("--out is required");
  const fs::path dir(common.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string(flag) + " is required");
}

std::vector<double> parse_grid(const std::string& text) {
  if (text.empty()) return {std::begin(kDefaultLambdaGrid), std::end(kDefaultLambdaGrid)};
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const double v = std::stod(item, &used);
      if (used != item.size() && item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
      grid.push_back(v);
    } catch (const std::exception&) {
      throw ValidationError("malformed --lambda-grid entry: '" + item + "'");
    }
  }
  if (grid.empty()) throw ValidationError("--lambda-grid is empty");
  return grid;
}

TaskKind direction_from_flag(const std::string& d) {
  if (d == "text-audio" || d == "text_audio" || d == "t2a") return TaskKind::text_audio_retrieval;
  if (d == "audio-text" || d == "audio_text" || d == "a2t") return TaskKind::audio_text_retrieval;
  throw ValidationError("--direction must be text-audio or audio-text, got '" + d + "'");
}

// Codes for every row of `set`, optionally projected first.
std::vector<SparseCodeRecord> decompose_rows(const EmbeddingSet& set, const Decomposer& decomposer,
                                             const std::optional<ProjectionMatrix>& projection, unsigned threads) {
  if (!projection) return decomposer.decompose_all(set, threads);
  if (projection->dim != set.dim()) throw ValidationError("projection dimension differs from embeddings");
  std::vector<SparseCodeRecord> codes(set.count());
  parallel_for(set.count(), threads, [&](std::size_t i) {
    codes[i] = project_then_decompose(*projection, set.row_vector(i), set.id(i), decomposer);
  });
  return codes;
}

json interval_json(double value, const Interval& ci) { return {{"value", value}, {"ci_low", ci.low}, {"ci_high", ci.high}}; }

std::optional<ProjectionMatrix> maybe_projection(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return read_projection(path);
}

double mean_of(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

// ---------------------------------------------------------------------------

void cmd_synth(const SynthArgs& a, const Common& common, std::ostream& out) {
  SynthConfig cfg = a.cfg;
  cfg.seed = common.seed;
  const fs::path dir = require_out(common);
  const SynthDataset data = make_synthetic(cfg);
  write_synthetic(data, dir);
  print_summary(out, {{"command", "synth"},
                      {"out", dir.string()},
                      {"dim", cfg.dim},
                      {"concepts", cfg.concepts},
                      {"samples", cfg.samples},
                      {"sparsity", cfg.sparsity},
                      {"noise", cfg.noise},
                      {"classes", cfg.classes},
                      {"labels", data.prompts.count()},
                      {"seed", cfg.seed}});
}

void cmd_build_vocab(const BuildVocabArgs& a, const Common& common, std::ostream& out) {
  const Construction construction = construction_from_string(a.construction);
  if (a.vocab_size == 0) throw ValidationError("--vocab-size must be >= 1");
  const fs::path dir = require_out(common);
  const std::string vocab_id = a.vocab_id.empty() ? fs::path(common.out).lexically_normal().filename().string() : a.vocab_id;

  std::set<std::string> blocklist;
  if (!a.blocklist.empty()) blocklist = read_word_set(a.blocklist);
  std::optional<std::set<std::string>> wordlist;
  if (!a.wordlist.empty()) wordlist = read_word_set(a.wordlist);

  std::vector<std::string> concepts;
  json extra = json::object();
  std::optional<TagFrequencyTable> table;
  if (!a.tags.empty()) table = read_tag_table(a.tags);

  if (a.propose_synonyms) {
    if (!table) throw ValidationError("--propose-synonyms needs --tags");
    std::vector<std::string> tags;
    for (const auto& t : table->sorted()) tags.push_back(t.tag);
    write_synonym_groups(propose_stem_groups(tags), dir / "synonyms.proposed.txt");
  }

  switch (construction) {
    case Construction::baseline: {
      if (!table) throw ValidationError("baseline construction needs --tags");
      concepts = build_baseline(*table, blocklist, a.vocab_size, wordlist);
      break;
    }
    case Construction::pruned: {
      if (!table) throw ValidationError("pruned construction needs --tags");
      SynonymGroups groups;
      if (!a.synonyms.empty()) groups = read_synonym_groups(a.synonyms);
      const std::size_t pool = a.pool > 0 ? a.pool : table->entries.size();
      const auto pruned = build_pruned_with_counts(*table, groups, a.vocab_size, pool, {blocklist, wordlist});
      std::string csv = "concept,count\n";
      for (const auto& p : pruned) {
        concepts.push_back(p.tag);
        csv += p.tag + "," + std::to_string(p.count) + "\n";
      }
      write_text_file(dir / "concept_counts.csv", csv);
      break;
    }
    case Construction::clustered: {
      if (a.embeddings.empty()) throw ValidationError("clustered construction needs --embeddings (tag text embeddings)");
      EmbeddingSet store = read_embedding_set(a.embeddings);
      EmbeddingSet pool_set = store;
      if (table) {
        // Pool = the most frequent surviving tags that have an embedding.
        const std::size_t pool = a.pool > 0 ? a.pool : table->entries.size();
        std::vector<std::size_t> rows;
        for (const auto& t : table->sorted()) {
          if (rows.size() >= pool) break;
          if (blocklist.count(t.tag) || (wordlist && !wordlist->count(t.tag))) continue;
          if (is_single_letter(t.tag) || is_numeric(t.tag)) continue;
          if (const auto row = store.index_of(t.tag)) rows.push_back(*row);
        }
        pool_set = store.select(rows);
      } else if (a.pool > 0 && a.pool < store.count()) {
        std::vector<std::size_t> rows(a.pool);
        std::iota(rows.begin(), rows.end(), 0);
        pool_set = store.select(rows);
      }
      if (!pool_set.normalized()) pool_set = l2_normalize(pool_set);
      concepts = build_clustered(pool_set, a.vocab_size, common.seed);
      extra["pool_size"] = pool_set.count();
      break;
    }
  }

  write_concept_list(concepts, dir / "concepts.txt");
  bool wrote_store = false;
  if (!a.embeddings.empty()) {
    const ConceptVocabulary vocab = make_vocabulary(vocab_id, concepts, read_embedding_set(a.embeddings), construction);
    write_vocabulary(vocab, dir);
    wrote_store = true;
  }
  json summary = {{"command", "build-vocab"},
                  {"construction", to_string(construction)},
                  {"vocabulary_id", vocab_id},
                  {"size", concepts.size()},
                  {"embeddings_written", wrote_store},
                  {"out", dir.string()}};
  for (auto it = extra.begin(); it != extra.end(); ++it) summary[it.key()] = it.value();
  print_summary(out, summary);
}

void cmd_decompose(const DecomposeArgs& a, const SolverArgs& s, const Common& common, std::ostream& out) {
  require(a.vocab, "--vocab");
  require(a.embeddings, "--embeddings");
  if (a.top_k == 0) throw ValidationError("--top-k must be >= 1");
  const fs::path dir = require_out(common);
  const ConceptVocabulary vocab = read_vocabulary(a.vocab);
  const EmbeddingSet set = read_embedding_set(a.embeddings);
  const auto projection = maybe_projection(a.projection);
  const Decomposer decomposer(vocab, s.config());
  const unsigned threads = resolve_threads(common.threads);
  const auto codes = decompose_rows(set, decomposer, projection, threads);
  write_sparse_codes(codes, dir / "codes.jsonl");

  std::string reports;
  std::vector<double> cosines;
  std::vector<double> l0s;
  std::size_t empty = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    Eigen::VectorXd z = set.row_vector(i);
    if (projection) z = projection->weights * z;
    const ConceptReport r = report(codes[i], vocab, z, a.top_k);
    reports += to_json(r).dump() + "\n";
    cosines.push_back(r.reconstruction_cosine);
    l0s.push_back(static_cast<double>(r.l0));
    if (r.empty()) ++empty;
  }
  write_text_file(dir / "reports.jsonl", reports);

  std::size_t profiles = 0;
  if (!a.manifest.empty()) {
    const DatasetManifest manifest = read_manifest(a.manifest);
    manifest.validate();
    const fs::path pdir = dir / "profiles";
    fs::create_directories(pdir);
    for (const ClassProfile& p : class_profiles(codes, manifest, vocab.size())) {
      write_class_profile_csv(p, vocab, pdir / (p.class_label + ".csv"));
      ++profiles;
    }
  }
  print_summary(out, {{"command", "decompose"},
                      {"vocabulary_id", vocab.vocabulary_id},
                      {"lambda", s.lambda},
                      {"count", codes.size()},
                      {"mean_l0", mean_of(l0s)},
                      {"mean_reconstruction_cosine", mean_of(cosines)},
                      {"empty_codes", empty},
                      {"class_profiles", profiles},
                      {"out", dir.string()}});
}

void cmd_sweep(const SweepArgs& a, const SolverArgs& s, const Common& common, std::ostream& out) {
  require(a.embeddings, "--embeddings");
  if (a.vocabs.empty()) throw ValidationError("at least one --vocab is required");
  const fs::path dir = require_out(common);
  const std::vector<double> grid = parse_grid(a.lambda_grid);

  TaskSpec spec;
  if (!a.task.empty()) {
    spec = TaskSpec::from_json(read_json_file(a.task), fs::path(a.task).parent_path());
  } else if (!a.captions.empty()) {
    require(a.manifest, "--manifest");
    spec.task = direction_from_flag(a.direction.empty() ? "text-audio" : a.direction);
    spec.manifest = a.manifest;
    spec.captions = a.captions;
    spec.metric = a.metric.empty() ? "recall_at_1" : a.metric;
    spec.split = a.split;
  } else if (!a.prompts.empty()) {
    require(a.manifest, "--manifest");
    spec.task = TaskKind::classification;
    spec.manifest = a.manifest;
    spec.prompts = a.prompts;
    spec.template_text = a.template_text;
    spec.metric = a.metric.empty() ? "accuracy" : a.metric;
    spec.split = a.split;
  } else {
    spec.task = TaskKind::reconstruction;
    spec.manifest = a.manifest;
    spec.split = a.split;
  }

  const EmbeddingSet audio = read_embedding_set(a.embeddings);
  const PreparedTask task = prepare_task(spec, audio);
  std::vector<ConceptVocabulary> vocabs;
  vocabs.reserve(a.vocabs.size());
  for (const auto& v : a.vocabs) vocabs.push_back(read_vocabulary(v));
  std::vector<const ConceptVocabulary*> ptrs;
  for (const auto& v : vocabs) ptrs.push_back(&v);

  const auto rows = sweep(task.embeddings, ptrs, grid, task.metric, s.config(), resolve_threads(common.threads));
  write_text_file(dir / "sweep.csv", sweep_csv(rows));
  print_summary(out, {{"command", "sweep"},
                      {"task", to_string(spec.task)},
                      {"metric", task.metric_name},
                      {"rows", rows.size()},
                      {"samples", task.embeddings.count()},
                      {"out", (dir / "sweep.csv").string()}});
}

void cmd_classify(const ClassifyArgs& a, const SolverArgs& s, const Common& common, std::ostream& out) {
  require(a.embeddings, "--embeddings");
  require(a.manifest, "--manifest");
  require(a.prompts, "--prompts");
  if (a.bootstrap < 1) throw ValidationError("--bootstrap must be >= 1");
  const fs::path dir = require_out(common);
  const EmbeddingSet audio = read_embedding_set(a.embeddings);
  const DatasetManifest manifest = read_manifest(a.manifest);
  const ClassificationData data =
      load_classification(audio, manifest, read_embedding_set(a.prompts), a.template_text, a.split);
  const EmbeddingSet subset = audio.select(data.rows);
  std::vector<std::size_t> positions(data.rows.size());
  std::iota(positions.begin(), positions.end(), 0);

  auto score = [&](const std::vector<Prediction>& preds, TaskKind, const std::string& vocab_id) {
    const auto point = classification_metric(a.metric, preds, data, positions);
    if (!point) throw ValidationError("metric " + a.metric + " is undefined on this split");
    const Interval ci = bootstrap_ci(
        positions,
        [&](std::span<const std::size_t> sample) { return classification_metric(a.metric, preds, data, sample); },
        a.bootstrap, common.seed);
    EvalReport r;
    r.task = TaskKind::classification;
    r.metric_name = a.metric;
    r.value = *point;
    r.ci_low = ci.low;
    r.ci_high = ci.high;
    r.n_bootstrap = a.bootstrap;
    r.lambda = vocab_id.empty() ? 0.0 : s.lambda;
    r.vocabulary_id = vocab_id;
    return r;
  };

  const auto projection = maybe_projection(a.projection);
  Eigen::MatrixXd dense = subset.matrix().cast<double>();
  if (projection) {
    if (projection->dim != subset.dim()) throw ValidationError("projection dimension differs from embeddings");
    dense = dense * projection->weights.transpose();
  }
  const auto dense_preds = classify(dense, data.prompts);
  const EvalReport dense_report = score(dense_preds, TaskKind::classification, "");

  json summary = {{"command", "classify"},
                  {"metric", a.metric},
                  {"samples", data.rows.size()},
                  {"dense", interval_json(dense_report.value, {dense_report.ci_low, dense_report.ci_high})}};
  json reports = json::array({to_json(dense_report)});

  std::vector<Prediction> concept_preds;
  if (!a.vocab.empty()) {
    const ConceptVocabulary vocab = read_vocabulary(a.vocab);
    const Decomposer decomposer(vocab, s.config());
    const auto codes = decompose_rows(subset, decomposer, projection, resolve_threads(common.threads));
    write_sparse_codes(codes, dir / "codes.jsonl");
    concept_preds = classify(codes, vocab, data.prompts);
    const EvalReport concept_report = score(concept_preds, TaskKind::classification, vocab.vocabulary_id);
    reports.push_back(to_json(concept_report));
    std::vector<double> l0s;
    for (const auto& c : codes) l0s.push_back(static_cast<double>(c.l0()));
    summary["concept"] = interval_json(concept_report.value, {concept_report.ci_low, concept_report.ci_high});
    summary["vocabulary_id"] = vocab.vocabulary_id;
    summary["lambda"] = s.lambda;
    summary["mean_l0"] = mean_of(l0s);
  }

  std::string lines;
  for (std::size_t i = 0; i < data.rows.size(); ++i) {
    json line = {{"id", subset.id(i)},
                 {"gold", data.prompts.class_labels[data.gold[i].front()]},
                 {"dense", data.prompts.class_labels[dense_preds[i].label_index]}};
    if (!concept_preds.empty()) line["concept"] = data.prompts.class_labels[concept_preds[i].label_index];
    lines += line.dump() + "\n";
  }
  write_text_file(dir / "predictions.jsonl", lines);
  write_text_file(dir / "report.json", reports.dump(1) + "\n");
  summary["out"] = dir.string();
  print_summary(out, summary);
}

void cmd_retrieve(const RetrieveArgs& a, const SolverArgs& s, const Common& common, std::ostream& out) {
  require(a.embeddings, "--embeddings");
  require(a.manifest, "--manifest");
  require(a.captions, "--captions");
  if (a.bootstrap < 1) throw ValidationError("--bootstrap must be >= 1");
  const TaskKind direction = direction_from_flag(a.direction);
  const fs::path dir = require_out(common);
  const EmbeddingSet audio = read_embedding_set(a.embeddings);
  const RetrievalData data = load_retrieval(audio, read_manifest(a.manifest), read_embedding_set(a.captions), a.split);
  const EmbeddingSet subset = audio.select(data.audio_rows);

  auto score = [&](const RetrievalResult& r, const std::string& vocab_id) {
    json reports = json::array();
    json summary = json::object();
    for (const auto& [name, per_query] : {std::pair{"recall_at_1", &r.query_hit_at_1},
                                          std::pair{"map_at_10", &r.query_ap_at_10}}) {
      const double point = mean_of(*per_query);
      const Interval ci = bootstrap_ci(
          *per_query, [](std::span<const double> v) { return std::optional<double>(mean_of(v)); }, a.bootstrap,
          common.seed);
      EvalReport rep;
      rep.task = direction;
      rep.metric_name = name;
      rep.value = point;
      rep.ci_low = ci.low;
      rep.ci_high = ci.high;
      rep.n_bootstrap = a.bootstrap;
      rep.lambda = vocab_id.empty() ? 0.0 : s.lambda;
      rep.vocabulary_id = vocab_id;
      reports.push_back(to_json(rep));
      summary[name] = interval_json(point, ci);
    }
    return std::pair{reports, summary};
  };

  const auto dense = evaluate_retrieval(data, subset.matrix().cast<double>(), direction);
  auto [reports, dense_summary] = score(dense, "");
  json summary = {{"command", "retrieve"},
                  {"direction", to_string(direction)},
                  {"queries", dense.query_hit_at_1.size()},
                  {"dense", dense_summary}};

  if (!a.vocab.empty()) {
    const ConceptVocabulary vocab = read_vocabulary(a.vocab);
    const Decomposer decomposer(vocab, s.config());
    const auto codes = decomposer.decompose_all(subset, resolve_threads(common.threads));
    write_sparse_codes(codes, dir / "codes.jsonl");
    Eigen::MatrixXd reps(static_cast<Eigen::Index>(codes.size()), static_cast<Eigen::Index>(vocab.dim()));
    for (std::size_t i = 0; i < codes.size(); ++i) reps.row(static_cast<Eigen::Index>(i)) = reconstruct(codes[i], vocab);
    const auto concept_result = evaluate_retrieval(data, reps, direction);
    auto [concept_reports, concept_summary] = score(concept_result, vocab.vocabulary_id);
    for (auto& r : concept_reports) reports.push_back(r);
    summary["concept"] = concept_summary;
    summary["vocabulary_id"] = vocab.vocabulary_id;
    summary["lambda"] = s.lambda;
  }
  write_text_file(dir / "report.json", reports.dump(1) + "\n");
  summary["out"] = dir.string();
  print_summary(out, summary);
}

void cmd_finetune(const FinetuneArgs& a, const SolverArgs& s, const Common& common, std::ostream& out) {
  require(a.embeddings, "--embeddings");
  require(a.manifest, "--manifest");
  require(a.prompts, "--prompts");
  const fs::path dir = require_out(common);
  TrainConfig cfg = a.train;
  cfg.seed = common.seed;
  const EmbeddingSet audio = read_embedding_set(a.embeddings);
  const DatasetManifest manifest = read_manifest(a.manifest);
  manifest.validate(ManifestKind::classification);
  const EmbeddingSet prompt_store = read_embedding_set(a.prompts);
  const PromptBank bank = make_prompt_bank(a.template_text, manifest.label_set(), prompt_store);
  const std::string dataset_id =
      a.dataset_id.empty() ? fs::path(a.manifest).stem().string() : a.dataset_id;

  const TrainResult result = train_projection(audio, manifest, bank, cfg, a.split, dataset_id);
  write_projection(result.projection, dir / "projection");
  std::string csv = "epoch,dev_loss\n";
  for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.10g\n", e, result.loss_history[e]);
    csv += buf;
  }
  write_text_file(dir / "loss.csv", csv);

  json summary = {{"command", "finetune"},
                  {"trained_on", dataset_id},
                  {"epochs_run", result.epochs_run},
                  {"initial_loss", result.loss_history.front()},
                  {"best_loss", result.best_loss},
                  {"skipped_samples", result.skipped_samples}};

  if (!a.vocab.empty() && !manifest.in_split(a.eval_split).empty()) {
    const ConceptVocabulary vocab = read_vocabulary(a.vocab);
    const ClassificationData data = load_classification(audio, manifest, prompt_store, a.template_text, a.eval_split);
    const EmbeddingSet subset = audio.select(data.rows);
    const Decomposer decomposer(vocab, s.config());
    const unsigned threads = resolve_threads(common.threads);
    std::vector<std::size_t> positions(data.rows.size());
    std::iota(positions.begin(), positions.end(), 0);
    const auto plain = classify(decompose_rows(subset, decomposer, std::nullopt, threads), vocab, data.prompts);
    const auto tuned_codes = decompose_rows(subset, decomposer, result.projection, threads);
    write_sparse_codes(tuned_codes, dir / "codes.jsonl");
    const auto tuned = classify(tuned_codes, vocab, data.prompts);
    summary["eval_split"] = a.eval_split;
    summary["lambda"] = s.lambda;
    summary["concept_accuracy"] = classification_metric("accuracy", plain, data, positions).value_or(0.0);
    summary["finetuned_concept_accuracy"] = classification_metric("accuracy", tuned, data, positions).value_or(0.0);
  }
  summary["out"] = dir.string();
  print_summary(out, summary);
}

void cmd_report(const ReportArgs& a, const Common& common, std::ostream& out) {
  if (a.sweeps.empty()) throw ValidationError("at least one --sweep CSV is required");
  const fs::path dir = require_out(common);
  std::vector<SweepRow> rows;
  for (const auto& file : a.sweeps) {
    const auto part = parse_sweep_csv(read_text_file(file));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  const std::vector<std::pair<std::string, std::pair<SweepField, std::string>>> charts = {
      {"metric_vs_lambda.svg", {SweepField::metric, a.metric_label}},
      {"l0_vs_lambda.svg", {SweepField::mean_l0, "mean L0"}},
      {"cosine_vs_lambda.svg", {SweepField::mean_reconstruction_cosine, "mean reconstruction cosine"}},
  };
  json files = json::array();
  for (const auto& [name, spec] : charts) {
    const auto series = sweep_series(rows, spec.first);
    write_text_file(dir / name, line_chart_svg(a.title + ": " + spec.second, "lambda", spec.second, series));
    files.push_back(name);
  }
  std::set<std::string> vocabs;
  for (const auto& r : rows) vocabs.insert(r.vocabulary_id);
  print_summary(out, {{"command", "report"},
                      {"rows", rows.size()},
                      {"series", vocabs.size()},
                      {"files", files},
                      {"out", dir.string()}});
}

void add_common(CLI::App* sub, Common& common, bool with_seed, bool with_threads) {
  sub->add_option("--out", common.out, "Output directory")->required();
  if (with_seed) sub->add_option("--seed", common.seed, "Random seed")->capture_default_str();
  if (with_threads) {
    sub->add_option("--threads", common.threads,
                    "Worker threads (0 = CONCEPT_LENS_THREADS or all available cores)")
        ->capture_default_str();
  }
}

void add_solver(CLI::App* sub, SolverArgs& s) {
  sub->add_option("--lambda", s.lambda, "L1 penalty")->capture_default_str();
  sub->add_option("--max-sweeps", s.max_sweeps, "Coordinate-descent sweep limit")->capture_default_str();
  sub->add_option("--tolerance", s.tolerance, "Convergence tolerance on the largest coordinate change")
      ->capture_default_str();
}

int error_exit(std::ostream& err, const char* kind, const std::string& message, int code) {
  err << json{{"error", {{"type", kind}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sparse concept decompositions of audio-text embeddings", "concept-lens"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "concept-lens 0.1.0");

  Common common;
  SolverArgs solver;

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a planted sparse-code dataset");
  add_common(c_synth, common, true, false);
  c_synth->add_option("--dim", synth.cfg.dim, "Embedding dimension d")->capture_default_str();
  c_synth->add_option("--concepts", synth.cfg.concepts, "Number of concepts c")->capture_default_str();
  c_synth->add_option("--samples", synth.cfg.samples, "Number of embeddings n")->capture_default_str();
  c_synth->add_option("--sparsity", synth.cfg.sparsity, "Planted support size k")->capture_default_str();
  c_synth->add_option("--noise", synth.cfg.noise, "Expected L2 norm of the additive noise")->capture_default_str();
  c_synth->add_option("--classes", synth.cfg.classes,
                      "Disjoint concept groups used as classes (0 = label by dominant concept)")
      ->capture_default_str();
  c_synth->add_option("--template", synth.cfg.template_text, "Prompt template")->capture_default_str();

  BuildVocabArgs bv;
  auto* c_bv = app.add_subcommand("build-vocab", "Build a concept vocabulary");
  add_common(c_bv, common, true, false);
  c_bv->add_option("--construction", bv.construction, "baseline | pruned | clustered")->capture_default_str();
  c_bv->add_option("--tags", bv.tags, "Tag frequency CSV (tag,count)");
  c_bv->add_option("--embeddings", bv.embeddings,
                   "Text-embedding store keyed by tag; required for clustered, optional otherwise");
  c_bv->add_option("--vocab-size", bv.vocab_size, "Number of concepts")->required();
  c_bv->add_option("--pool", bv.pool, "Most frequent tags considered (0 = all)")->capture_default_str();
  c_bv->add_option("--blocklist", bv.blocklist, "Words to drop, one per line");
  c_bv->add_option("--wordlist", bv.wordlist, "Accepted English words, one per line");
  c_bv->add_option("--synonyms", bv.synonyms, "Synonym groups, one comma-separated group per line");
  c_bv->add_option("--vocab-id", bv.vocab_id, "Vocabulary id (default: output directory name)");
  c_bv->add_flag("--propose-synonyms", bv.propose_synonyms, "Write stem-based synonym proposals");

  DecomposeArgs dec;
  auto* c_dec = app.add_subcommand("decompose", "Decompose embeddings into sparse concept codes");
  add_common(c_dec, common, true, true);
  add_solver(c_dec, solver);
  c_dec->add_option("--vocab", dec.vocab, "Vocabulary directory")->required();
  c_dec->add_option("--embeddings", dec.embeddings, "Embedding store")->required();
  c_dec->add_option("--manifest", dec.manifest, "Manifest; enables per-class profiles");
  c_dec->add_option("--projection", dec.projection, "Projection directory applied before decomposing");
  c_dec->add_option("--top-k", dec.top_k, "Concepts listed per report")->capture_default_str();

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "Sweep lambda and vocabularies over a task");
  add_common(c_sw, common, true, true);
  add_solver(c_sw, solver);
  c_sw->add_option("--vocab", sw.vocabs, "Vocabulary directory (repeatable)")->required();
  c_sw->add_option("--embeddings", sw.embeddings, "Audio embedding store")->required();
  c_sw->add_option("--lambda-grid", sw.lambda_grid, "Comma-separated lambdas (default 0.01..0.50 grid)");
  c_sw->add_option("--task", sw.task, "Task spec JSON; overrides the task flags below");
  c_sw->add_option("--manifest", sw.manifest, "Dataset manifest");
  c_sw->add_option("--prompts", sw.prompts, "Prompt embedding store (classification)");
  c_sw->add_option("--captions", sw.captions, "Caption embedding store (retrieval)");
  c_sw->add_option("--template", sw.template_text, "Prompt template")->capture_default_str();
  c_sw->add_option("--metric", sw.metric, "accuracy | macro_f1 | micro_f1 | map | recall_at_1 | map_at_10");
  c_sw->add_option("--direction", sw.direction, "text-audio | audio-text");
  c_sw->add_option("--split", sw.split, "Manifest split (default: all)");

  ClassifyArgs cl;
  auto* c_cl = app.add_subcommand("classify", "Zero-shot classification with dense and concept representations");
  add_common(c_cl, common, true, true);
  add_solver(c_cl, solver);
  c_cl->add_option("--vocab", cl.vocab, "Vocabulary directory; omit for dense-only evaluation");
  c_cl->add_option("--embeddings", cl.embeddings, "Audio embedding store")->required();
  c_cl->add_option("--manifest", cl.manifest, "Dataset manifest")->required();
  c_cl->add_option("--prompts", cl.prompts, "Prompt embedding store")->required();
  c_cl->add_option("--projection", cl.projection, "Projection directory applied to audio embeddings");
  c_cl->add_option("--template", cl.template_text, "Prompt template")->capture_default_str();
  c_cl->add_option("--metric", cl.metric, "accuracy | macro_f1 | micro_f1 | map")->capture_default_str();
  c_cl->add_option("--split", cl.split, "Manifest split (default: all)");
  c_cl->add_option("--bootstrap", cl.bootstrap, "Bootstrap resamples")->capture_default_str();

  RetrieveArgs rt;
  auto* c_rt = app.add_subcommand("retrieve", "Audio-text retrieval with dense and concept representations");
  add_common(c_rt, common, true, true);
  add_solver(c_rt, solver);
  c_rt->add_option("--vocab", rt.vocab, "Vocabulary directory; omit for dense-only evaluation");
  c_rt->add_option("--embeddings", rt.embeddings, "Audio embedding store")->required();
  c_rt->add_option("--manifest", rt.manifest, "Dataset manifest with captions")->required();
  c_rt->add_option("--captions", rt.captions, "Caption embedding store keyed by caption text")->required();
  c_rt->add_option("--direction", rt.direction, "text-audio | audio-text")->capture_default_str();
  c_rt->add_option("--split", rt.split, "Manifest split (default: all)");
  c_rt->add_option("--bootstrap", rt.bootstrap, "Bootstrap resamples")->capture_default_str();

  FinetuneArgs ft;
  auto* c_ft = app.add_subcommand("finetune", "Train the linear projection and evaluate projected codes");
  add_common(c_ft, common, true, true);
  add_solver(c_ft, solver);
  c_ft->add_option("--embeddings", ft.embeddings, "Audio embedding store")->required();
  c_ft->add_option("--manifest", ft.manifest, "Dataset manifest")->required();
  c_ft->add_option("--prompts", ft.prompts, "Prompt embedding store")->required();
  c_ft->add_option("--vocab", ft.vocab, "Vocabulary directory; enables evaluation on --eval-split");
  c_ft->add_option("--template", ft.template_text, "Prompt template")->capture_default_str();
  c_ft->add_option("--split", ft.split, "Training split")->capture_default_str();
  c_ft->add_option("--eval-split", ft.eval_split, "Evaluation split")->capture_default_str();
  c_ft->add_option("--dataset-id", ft.dataset_id, "Recorded in the projection (default: manifest name)");
  c_ft->add_option("--learning-rate", ft.train.learning_rate, "Gradient step size")->capture_default_str();
  c_ft->add_option("--epochs", ft.train.max_epochs, "Maximum epochs")->capture_default_str();
  c_ft->add_option("--batch-size", ft.train.batch_size, "Mini-batch size")->capture_default_str();
  c_ft->add_option("--patience", ft.train.early_stop_patience, "Early-stop patience (<= 0 disables)")
      ->capture_default_str();
  c_ft->add_option("--init-scale", ft.train.init_scale, "Uniform init half-width")->capture_default_str();
  c_ft->add_flag("--identity-init", ft.train.identity_init, "Add the identity to the initial matrix");

  ReportArgs rp;
  auto* c_rp = app.add_subcommand("report", "Render sweep CSVs as SVG line charts");
  add_common(c_rp, common, false, false);
  c_rp->add_option("--sweep", rp.sweeps, "Sweep CSV (repeatable)")->required();
  c_rp->add_option("--metric", rp.metric_label, "Metric axis label")->capture_default_str();
  c_rp->add_option("--title", rp.title, "Chart title prefix")->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    return error_exit(err, "usage", e.what(), 2);
  }

  try {
    if (c_synth->parsed()) cmd_synth(synth, common, out);
    else if (c_bv->parsed()) cmd_build_vocab(bv, common, out);
    else if (c_dec->parsed()) cmd_decompose(dec, solver, common, out);
    else if (c_sw->parsed()) cmd_sweep(sw, solver, common, out);
    else if (c_cl->parsed()) cmd_classify(cl, solver, common, out);
    else if (c_rt->parsed()) cmd_retrieve(rt, solver, common, out);
    else if (c_ft->parsed()) cmd_finetune(ft, solver, common, out);
    else if (c_rp->parsed()) cmd_report(rp, common, out);
  } catch (const ValidationError& e) {
    return error_exit(err, "validation", e.what(), 2);
  } catch (const FormatError& e) {
    return error_exit(err, "format", e.what(), 1);
  } catch (const IoError& e) {
    return error_exit(err, "io", e.what(), 1);
  } catch (const std::exception& e) {
    return error_exit(err, "runtime", e.what(), 1);
  }
  return 0;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace concept_lens::cli
