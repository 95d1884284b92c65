#pragma once

// Zero-shot classification and retrieval over dense or concept-based
// representations, the metrics used to score them, percentile bootstrap
// intervals, and the lambda / vocabulary sweep harness.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "concept_lens/decomposer.hpp"
#include "concept_lens/errors.hpp"
#include "concept_lens/random.hpp"
#include "concept_lens/store.hpp"
#include "concept_lens/vocab.hpp"

namespace concept_lens {

inline constexpr const char* kDefaultPromptTemplate = "This is a sound of [class label].";
inline constexpr const char* kLabelPlaceholder = "[class label]";

// Replaces the single "[class label]" placeholder.
std::string expand_template(const std::string& template_text, const std::string& label);

struct PromptBank {
  std::string template_text;
  std::vector<std::string> class_labels;
  EmbeddingSet prompt_embeddings;  // one normalized row per class, same order

  void validate() const;
  std::size_t size() const { return class_labels.size(); }
  // classes x d.
  Eigen::MatrixXd matrix() const { return prompt_embeddings.matrix().cast<double>(); }
};

// Looks up each expanded prompt in a text-embedding store; a store keyed by the
// bare label is accepted as a fallback.
PromptBank make_prompt_bank(const std::string& template_text, const std::vector<std::string>& labels,
                            const EmbeddingSet& text_store);

struct Prediction {
  std::size_t label_index = 0;
  Eigen::VectorXd logits;
  Eigen::VectorXd probabilities;
};

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

// Rows of `representations` are samples. Logits are cosines against each
// prompt; zero rows yield all-zero logits.
std::vector<Prediction> classify(const Eigen::MatrixXd& representations, const PromptBank& prompts);
// Reconstructs each code through the vocabulary first.
std::vector<Prediction> classify(const std::vector<SparseCodeRecord>& codes, const ConceptVocabulary& vocab,
                                 const PromptBank& prompts);

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> gold);

enum class F1Average { macro, micro };
double f1_score(std::span<const std::size_t> predicted, std::span<const std::size_t> gold, std::size_t num_labels,
                F1Average average);
inline double macro_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> gold,
                       std::size_t num_labels) {
  return f1_score(predicted, gold, num_labels, F1Average::macro);
}

// Average precision of one ranking; ties in score are ordered by sample index.
// Returns nullopt when there are no positives.
std::optional<double> average_precision(std::span<const double> scores, const std::vector<bool>& positive);

// scores: samples x classes; gold[s][c] marks positives. Mean AP over classes
// with at least one positive.
double mean_average_precision(const Eigen::MatrixXd& scores, const std::vector<std::vector<bool>>& gold);

struct RetrievalResult {
  double recall_at_1 = 0.0;
  double map_at_10 = 0.0;
  std::vector<double> query_hit_at_1;
  std::vector<double> query_ap_at_10;
};

// Ranks gallery rows by cosine against every query row (ties by gallery id
// ascending). relevance[q] names the gallery ids relevant to query q.
RetrievalResult retrieve(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                         const std::vector<std::string>& gallery_ids,
                         const std::vector<std::set<std::string>>& relevance);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// Linear-interpolated empirical quantile of a non-empty sample, q in [0, 1].
double quantile(std::vector<double> values, double q);

// Percentile bootstrap. `metric` maps a resample to a value, or nullopt when
// the metric is undefined on it (that resample is redrawn; at most
// 10 * n_bootstrap draws in total). The interval is widened to contain the
// metric on the full sample.
template <typename T, typename Metric>
Interval bootstrap_ci(const std::vector<T>& outcomes, Metric&& metric, int n_bootstrap, std::uint64_t seed,
                      double alpha = 0.05) {
  if (outcomes.empty()) throw ValidationError("bootstrap needs at least one outcome");
  if (n_bootstrap < 1) throw ValidationError("n_bootstrap must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  const std::optional<double> point = metric(std::span<const T>(outcomes));
  if (!point) throw ValidationError("metric undefined on the full sample");

  Rng rng(seed);
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(n_bootstrap));
  std::vector<T> resample(outcomes.size());
  const long long max_draws = 10LL * n_bootstrap;
  long long draws = 0;
  while (static_cast<int>(stats.size()) < n_bootstrap) {
    if (draws++ >= max_draws) throw Error("bootstrap: metric undefined on too many resamples");
    for (auto& slot : resample) slot = outcomes[uniform_index(rng, outcomes.size())];
    if (auto v = metric(std::span<const T>(resample))) stats.push_back(*v);
  }
  Interval ci{quantile(stats, alpha / 2.0), quantile(stats, 1.0 - alpha / 2.0)};
  ci.low = std::min(ci.low, *point);
  ci.high = std::max(ci.high, *point);
  return ci;
}

// ---------------------------------------------------------------------------
// Task data assembled from stores and a manifest.

enum class TaskKind { reconstruction, classification, audio_text_retrieval, text_audio_retrieval };
std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

struct EvalReport {
  TaskKind task = TaskKind::classification;
  std::string metric_name;
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  int n_bootstrap = 0;
  double lambda = 0.0;
  std::string vocabulary_id;  // empty for dense embeddings
};
nlohmann::json to_json(const EvalReport& report);

struct ClassificationData {
  PromptBank prompts;
  std::vector<std::size_t> rows;                   // rows of the audio set, manifest order
  std::vector<std::vector<std::size_t>> gold;      // label indices per sample (first = primary)
};

ClassificationData load_classification(const EmbeddingSet& audio, const DatasetManifest& manifest,
                                       const EmbeddingSet& prompt_store, const std::string& template_text,
                                       const std::string& split);

// Per-sample score for metrics "accuracy", "macro_f1", "micro_f1" and "map",
// evaluated on a subset of sample positions (for the bootstrap).
std::optional<double> classification_metric(const std::string& metric, const std::vector<Prediction>& predictions,
                                            const ClassificationData& data, std::span<const std::size_t> samples);

struct RetrievalData {
  std::vector<std::size_t> audio_rows;  // rows of the audio set
  std::vector<std::string> audio_ids;
  std::vector<std::string> caption_texts;  // unique captions, sorted
  Eigen::MatrixXd caption_matrix;          // one normalized row per caption text
  std::vector<std::set<std::string>> captions_of_audio;
  // One query per caption occurrence for text -> audio.
  std::vector<std::size_t> text_query_caption;
  std::vector<std::set<std::string>> text_query_relevant_audio;
};

RetrievalData load_retrieval(const EmbeddingSet& audio, const DatasetManifest& manifest,
                             const EmbeddingSet& caption_store, const std::string& split);

// audio_repr rows align with data.audio_rows.
RetrievalResult evaluate_retrieval(const RetrievalData& data, const Eigen::MatrixXd& audio_repr, TaskKind direction);

// ---------------------------------------------------------------------------
// Sweep harness.

struct SweepRow {
  double lambda = 0.0;
  std::string vocabulary_id;
  std::size_t vocab_size = 0;
  double mean_l0 = 0.0;
  double metric = 0.0;  // NaN when the task has no downstream metric
  double mean_reconstruction_cosine = 0.0;
};

// Scores a batch of codes (aligned with the swept embedding set).
using CodeMetric = std::function<double(const std::vector<SparseCodeRecord>&, const ConceptVocabulary&)>;

inline constexpr double kDefaultLambdaGrid[] = {0.01, 0.03, 0.05, 0.10, 0.15, 0.25, 0.35, 0.50};

// Rows ordered by (vocabulary_id, lambda ascending).
std::vector<SweepRow> sweep(const EmbeddingSet& embeddings, const std::vector<const ConceptVocabulary*>& vocabs,
                            std::vector<double> lambda_grid, const CodeMetric& metric, const SolverConfig& base,
                            unsigned threads = 1);

struct TaskSpec {
  TaskKind task = TaskKind::reconstruction;
  std::filesystem::path manifest;
  std::filesystem::path embeddings;
  std::filesystem::path prompts;
  std::filesystem::path captions;
  std::string template_text = kDefaultPromptTemplate;
  std::string metric = "accuracy";
  std::string split;

  // Relative paths resolve against base_dir.
  static TaskSpec from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

// Builds the metric for a task spec over the given audio set. Returns nullptr
// for reconstruction-only tasks. The sweep then runs on the returned subset.
struct PreparedTask {
  EmbeddingSet embeddings;  // the evaluated samples, in task order
  CodeMetric metric;
  std::string metric_name;
};
PreparedTask prepare_task(const TaskSpec& spec, const EmbeddingSet& audio);

std::string sweep_csv(const std::vector<SweepRow>& rows);
std::vector<SweepRow> parse_sweep_csv(const std::string& text);

}  // namespace concept_lens
