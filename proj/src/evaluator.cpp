#include "concept_lens/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

#include "concept_lens/errors.hpp"

namespace concept_lens {

namespace fs = std::filesystem;

std::string expand_template(const std::string& template_text, const std::string& label) {
  const std::string placeholder = kLabelPlaceholder;
  const auto pos = template_text.find(placeholder);
  if (pos == std::string::npos || template_text.find(placeholder, pos + 1) != std::string::npos) {
    throw ValidationError("prompt template must contain \"[class label]\" exactly once: " + template_text);
  }
  std::string out = template_text;
  out.replace(pos, placeholder.size(), label);
  return out;
}

void PromptBank::validate() const {
  expand_template(template_text, "x");
  if (class_labels.empty()) throw ValidationError("empty prompt bank");
  if (prompt_embeddings.count() != class_labels.size()) throw ValidationError("prompt bank rows do not match labels");
  if (!prompt_embeddings.normalized()) throw ValidationError("prompt embeddings must be normalized");
}

PromptBank make_prompt_bank(const std::string& template_text, const std::vector<std::string>& labels,
                            const EmbeddingSet& text_store) {
  if (labels.empty()) throw ValidationError("empty prompt bank");
  std::vector<std::size_t> rows;
  for (const auto& label : labels) {
    const std::string prompt = expand_template(template_text, label);
    auto idx = text_store.index_of(prompt);
    if (!idx) idx = text_store.index_of(label);
    if (!idx) throw ValidationError("no prompt embedding for class '" + label + "' (looked up \"" + prompt + "\")");
    rows.push_back(*idx);
  }
  PromptBank bank{template_text, labels, l2_normalize(text_store.select(rows))};
  bank.validate();
  return bank;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  if (logits.size() == 0) throw ValidationError("softmax of empty vector");
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

std::vector<Prediction> classify(const Eigen::MatrixXd& representations, const PromptBank& prompts) {
  prompts.validate();
  const Eigen::MatrixXd p = prompts.matrix();
  if (representations.cols() != p.cols()) throw ValidationError("dimension mismatch between samples and prompts");
  const Eigen::VectorXd p_norms = p.rowwise().norm();
  std::vector<Prediction> out(static_cast<std::size_t>(representations.rows()));
  for (Eigen::Index i = 0; i < representations.rows(); ++i) {
    Prediction& pred = out[static_cast<std::size_t>(i)];
    const double norm = representations.row(i).norm();
    pred.logits = Eigen::VectorXd::Zero(p.rows());
    if (norm > 0.0) pred.logits = (p * representations.row(i).transpose()).array() / (p_norms.array() * norm);
    pred.probabilities = softmax(pred.logits);
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < pred.logits.size(); ++j) {
      if (pred.logits[j] > pred.logits[best]) best = j;
    }
    pred.label_index = static_cast<std::size_t>(best);
  }
  return out;
}

std::vector<Prediction> classify(const std::vector<SparseCodeRecord>& codes, const ConceptVocabulary& vocab,
                                 const PromptBank& prompts) {
  Eigen::MatrixXd reps(static_cast<Eigen::Index>(codes.size()), static_cast<Eigen::Index>(vocab.dim()));
  for (std::size_t i = 0; i < codes.size(); ++i) reps.row(static_cast<Eigen::Index>(i)) = reconstruct(codes[i], vocab);
  return classify(reps, prompts);
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> gold) {
  if (predicted.size() != gold.size()) throw ValidationError("predictions and gold differ in length");
  if (gold.empty()) throw ValidationError("accuracy of empty input");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predicted[i] == gold[i];
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

double f1_score(std::span<const std::size_t> predicted, std::span<const std::size_t> gold, std::size_t num_labels,
                F1Average average) {
  if (predicted.size() != gold.size()) throw ValidationError("predictions and gold differ in length");
  if (gold.empty()) throw ValidationError("F1 of empty input");
  if (num_labels == 0) throw ValidationError("F1 needs at least one label");
  std::vector<double> tp(num_labels, 0.0), fp(num_labels, 0.0), fn(num_labels, 0.0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (predicted[i] >= num_labels || gold[i] >= num_labels) throw ValidationError("label index out of range");
    if (predicted[i] == gold[i]) {
      tp[gold[i]] += 1.0;
    } else {
      fp[predicted[i]] += 1.0;
      fn[gold[i]] += 1.0;
    }
  }
  auto f1 = [](double t, double p, double n) {
    const double precision = t + p > 0.0 ? t / (t + p) : 0.0;
    const double recall = t + n > 0.0 ? t / (t + n) : 0.0;
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  };
  if (average == F1Average::micro) {
    const double t = std::accumulate(tp.begin(), tp.end(), 0.0);
    const double p = std::accumulate(fp.begin(), fp.end(), 0.0);
    const double n = std::accumulate(fn.begin(), fn.end(), 0.0);
    return f1(t, p, n);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_labels; ++c) total += f1(tp[c], fp[c], fn[c]);
  return total / static_cast<double>(num_labels);
}

std::optional<double> average_precision(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ValidationError("scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0.0, sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positive[order[rank]]) {
      hits += 1.0;
      sum += hits / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0.0) return std::nullopt;
  return sum / hits;
}

double mean_average_precision(const Eigen::MatrixXd& scores, const std::vector<std::vector<bool>>& gold) {
  if (static_cast<std::size_t>(scores.rows()) != gold.size()) throw ValidationError("scores and gold differ in rows");
  double total = 0.0;
  std::size_t classes = 0;
  std::vector<double> column(static_cast<std::size_t>(scores.rows()));
  std::vector<bool> positive(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    for (Eigen::Index s = 0; s < scores.rows(); ++s) {
      const auto& g = gold[static_cast<std::size_t>(s)];
      if (g.size() != static_cast<std::size_t>(scores.cols())) throw ValidationError("gold row has wrong width");
      column[static_cast<std::size_t>(s)] = scores(s, c);
      positive[static_cast<std::size_t>(s)] = g[static_cast<std::size_t>(c)];
    }
    if (auto ap = average_precision(column, positive)) {
      total += *ap;
      ++classes;
    }
  }
  if (classes == 0) throw ValidationError("mean average precision: no class has positives");
  return total / static_cast<double>(classes);
}

namespace {

Eigen::MatrixXd normalized_rows(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

}  // namespace

RetrievalResult retrieve(const Eigen::MatrixXd& queries, const Eigen::MatrixXd& gallery,
                         const std::vector<std::string>& gallery_ids,
                         const std::vector<std::set<std::string>>& relevance) {
  if (gallery.rows() == 0) throw ValidationError("empty gallery");
  if (static_cast<std::size_t>(gallery.rows()) != gallery_ids.size()) throw ValidationError("gallery ids mismatch");
  if (static_cast<std::size_t>(queries.rows()) != relevance.size()) throw ValidationError("relevance size mismatch");
  if (queries.rows() == 0) throw ValidationError("no queries");
  if (queries.cols() != gallery.cols()) throw ValidationError("dimension mismatch between queries and gallery");

  const Eigen::MatrixXd scores = normalized_rows(queries) * normalized_rows(gallery).transpose();
  RetrievalResult res;
  std::vector<std::size_t> order(gallery_ids.size());
  for (Eigen::Index q = 0; q < queries.rows(); ++q) {
    const auto& relevant = relevance[static_cast<std::size_t>(q)];
    if (relevant.empty()) throw ValidationError("query without relevant items");
    std::iota(order.begin(), order.end(), 0);
    const std::size_t depth = std::min<std::size_t>(10, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(depth), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = scores(q, static_cast<Eigen::Index>(a));
                        const double sb = scores(q, static_cast<Eigen::Index>(b));
                        if (sa != sb) return sa > sb;
                        return gallery_ids[a] < gallery_ids[b];
                      });
    res.query_hit_at_1.push_back(relevant.count(gallery_ids[order[0]]) ? 1.0 : 0.0);
    double hits = 0.0, sum = 0.0;
    for (std::size_t rank = 0; rank < depth; ++rank) {
      if (relevant.count(gallery_ids[order[rank]])) {
        hits += 1.0;
        sum += hits / static_cast<double>(rank + 1);
      }
    }
    res.query_ap_at_10.push_back(sum / static_cast<double>(std::min<std::size_t>(relevant.size(), 10)));
  }
  const double nq = static_cast<double>(queries.rows());
  res.recall_at_1 = std::accumulate(res.query_hit_at_1.begin(), res.query_hit_at_1.end(), 0.0) / nq;
  res.map_at_10 = std::accumulate(res.query_ap_at_10.begin(), res.query_ap_at_10.end(), 0.0) / nq;
  return res;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

// ---------------------------------------------------------------------------

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::reconstruction: return "reconstruction";
    case TaskKind::classification: return "classification";
    case TaskKind::audio_text_retrieval: return "audio_text_retrieval";
    case TaskKind::text_audio_retrieval: return "text_audio_retrieval";
  }
  return "reconstruction";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "reconstruction") return TaskKind::reconstruction;
  if (s == "classification") return TaskKind::classification;
  if (s == "audio_text_retrieval" || s == "audio-text" || s == "audio_to_text") return TaskKind::audio_text_retrieval;
  if (s == "text_audio_retrieval" || s == "text-audio" || s == "text_to_audio") return TaskKind::text_audio_retrieval;
  throw ValidationError("unknown task: " + s);
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"task", to_string(r.task)}, {"metric_name", r.metric_name}, {"value", r.value},
          {"ci_low", r.ci_low},         {"ci_high", r.ci_high},         {"n_bootstrap", r.n_bootstrap},
          {"lambda", r.lambda},         {"vocabulary_id", r.vocabulary_id}};
}

ClassificationData load_classification(const EmbeddingSet& audio, const DatasetManifest& manifest,
                                       const EmbeddingSet& prompt_store, const std::string& template_text,
                                       const std::string& split) {
  manifest.validate(ManifestKind::classification);
  const std::vector<std::string> labels = manifest.label_set();
  ClassificationData data{make_prompt_bank(template_text, labels, prompt_store), {}, {}};
  std::map<std::string, std::size_t> label_index;
  for (std::size_t i = 0; i < labels.size(); ++i) label_index.emplace(labels[i], i);
  for (const ManifestEntry* e : manifest.in_split(split)) {
    const auto row = audio.index_of(e->id);
    if (!row) throw ValidationError("manifest id has no embedding: " + e->id);
    data.rows.push_back(*row);
    std::vector<std::size_t> gold;
    for (const auto& l : e->labels) gold.push_back(label_index.at(l));
    data.gold.push_back(std::move(gold));
  }
  if (data.rows.empty()) throw ValidationError("no manifest entries in split '" + split + "'");
  return data;
}

std::optional<double> classification_metric(const std::string& metric, const std::vector<Prediction>& predictions,
                                            const ClassificationData& data, std::span<const std::size_t> samples) {
  if (samples.empty()) return std::nullopt;
  if (metric == "map") {
    const auto k = static_cast<Eigen::Index>(data.prompts.size());
    Eigen::MatrixXd scores(static_cast<Eigen::Index>(samples.size()), k);
    std::vector<std::vector<bool>> gold(samples.size(), std::vector<bool>(static_cast<std::size_t>(k), false));
    bool any_positive = false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      scores.row(static_cast<Eigen::Index>(i)) = predictions[samples[i]].logits.transpose();
      for (std::size_t l : data.gold[samples[i]]) gold[i][l] = any_positive = true;
    }
    if (!any_positive) return std::nullopt;
    return mean_average_precision(scores, gold);
  }
  std::vector<std::size_t> pred, gold;
  for (std::size_t s : samples) {
    pred.push_back(predictions[s].label_index);
    gold.push_back(data.gold[s].front());
  }
  if (metric == "accuracy") return accuracy(pred, gold);
  if (metric == "macro_f1" || metric == "f1") return f1_score(pred, gold, data.prompts.size(), F1Average::macro);
  if (metric == "micro_f1") return f1_score(pred, gold, data.prompts.size(), F1Average::micro);
  throw ValidationError("unknown classification metric: " + metric);
}

RetrievalData load_retrieval(const EmbeddingSet& audio, const DatasetManifest& manifest,
                             const EmbeddingSet& caption_store, const std::string& split) {
  manifest.validate(ManifestKind::retrieval);
  RetrievalData data;
  std::set<std::string> unique;
  const auto entries = manifest.in_split(split);
  if (entries.empty()) throw ValidationError("no manifest entries in split '" + split + "'");
  for (const ManifestEntry* e : entries) {
    const auto row = audio.index_of(e->id);
    if (!row) throw ValidationError("manifest id has no embedding: " + e->id);
    data.audio_rows.push_back(*row);
    data.audio_ids.push_back(e->id);
    data.captions_of_audio.emplace_back(e->captions.begin(), e->captions.end());
    unique.insert(e->captions.begin(), e->captions.end());
  }
  data.caption_texts.assign(unique.begin(), unique.end());
  data.caption_matrix.resize(static_cast<Eigen::Index>(data.caption_texts.size()),
                             static_cast<Eigen::Index>(caption_store.dim()));
  std::map<std::string, std::size_t> caption_index;
  for (std::size_t i = 0; i < data.caption_texts.size(); ++i) {
    const auto row = caption_store.index_of(data.caption_texts[i]);
    if (!row) throw ValidationError("caption has no text embedding: " + data.caption_texts[i]);
    Eigen::VectorXd v = caption_store.row_vector(*row);
    if (v.norm() == 0.0) throw ValidationError("zero caption embedding: " + data.caption_texts[i]);
    data.caption_matrix.row(static_cast<Eigen::Index>(i)) = v.normalized();
    caption_index.emplace(data.caption_texts[i], i);
  }
  std::map<std::string, std::set<std::string>> audio_with_caption;
  for (std::size_t a = 0; a < data.audio_ids.size(); ++a) {
    for (const auto& c : data.captions_of_audio[a]) audio_with_caption[c].insert(data.audio_ids[a]);
  }
  for (const ManifestEntry* e : entries) {
    for (const auto& c : e->captions) {
      data.text_query_caption.push_back(caption_index.at(c));
      data.text_query_relevant_audio.push_back(audio_with_caption.at(c));
    }
  }
  return data;
}

RetrievalResult evaluate_retrieval(const RetrievalData& data, const Eigen::MatrixXd& audio_repr, TaskKind direction) {
  if (static_cast<std::size_t>(audio_repr.rows()) != data.audio_ids.size()) {
    throw ValidationError("audio representations do not align with retrieval data");
  }
  if (direction == TaskKind::audio_text_retrieval) {
    return retrieve(audio_repr, data.caption_matrix, data.caption_texts, data.captions_of_audio);
  }
  if (direction == TaskKind::text_audio_retrieval) {
    Eigen::MatrixXd queries(static_cast<Eigen::Index>(data.text_query_caption.size()), data.caption_matrix.cols());
    for (std::size_t q = 0; q < data.text_query_caption.size(); ++q) {
      queries.row(static_cast<Eigen::Index>(q)) = data.caption_matrix.row(static_cast<Eigen::Index>(data.text_query_caption[q]));
    }
    return retrieve(queries, audio_repr, data.audio_ids, data.text_query_relevant_audio);
  }
  throw ValidationError("retrieval direction must be audio_text_retrieval or text_audio_retrieval");
}

// ---------------------------------------------------------------------------

std::vector<SweepRow> sweep(const EmbeddingSet& embeddings, const std::vector<const ConceptVocabulary*>& vocabs,
                            std::vector<double> lambda_grid, const CodeMetric& metric, const SolverConfig& base,
                            unsigned threads) {
  if (lambda_grid.empty()) throw ValidationError("empty lambda grid");
  if (vocabs.empty()) throw ValidationError("sweep needs at least one vocabulary");
  for (double l : lambda_grid) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ValidationError("lambda grid values must be finite and >= 0");
  }
  std::sort(lambda_grid.begin(), lambda_grid.end());
  std::vector<const ConceptVocabulary*> ordered = vocabs;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const ConceptVocabulary* a, const ConceptVocabulary* b) { return a->vocabulary_id < b->vocabulary_id; });

  std::vector<Eigen::VectorXd> originals;
  originals.reserve(embeddings.count());
  for (std::size_t i = 0; i < embeddings.count(); ++i) originals.push_back(embeddings.row_vector(i));

  std::vector<SweepRow> rows;
  for (const ConceptVocabulary* vocab : ordered) {
    if (vocab->vocabulary_id.find_first_of(",\n\"") != std::string::npos) {
      throw ValidationError("vocabulary id cannot contain commas, quotes or newlines: " + vocab->vocabulary_id);
    }
    for (double lambda : lambda_grid) {
      SolverConfig cfg = base;
      cfg.lambda = lambda;
      const Decomposer decomposer(*vocab, cfg);
      const auto codes = decomposer.decompose_all(embeddings, threads);
      SweepRow row{lambda, vocab->vocabulary_id, vocab->size(), 0.0, std::numeric_limits<double>::quiet_NaN(), 0.0};
      for (std::size_t i = 0; i < codes.size(); ++i) {
        row.mean_l0 += static_cast<double>(codes[i].l0());
        row.mean_reconstruction_cosine += cosine(reconstruct(codes[i], *vocab), originals[i]);
      }
      row.mean_l0 /= static_cast<double>(codes.size());
      row.mean_reconstruction_cosine /= static_cast<double>(codes.size());
      if (metric) row.metric = metric(codes, *vocab);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

TaskSpec TaskSpec::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  auto path_of = [&](const char* key) -> fs::path {
    if (!j.contains(key)) return {};
    fs::path p = j.at(key).get<std::string>();
    if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
    return p;
  };
  TaskSpec spec;
  try {
    spec.task = task_kind_from_string(j.value("task", std::string("reconstruction")));
    spec.manifest = path_of("manifest");
    spec.embeddings = path_of("embeddings");
    spec.prompts = path_of("prompts");
    spec.captions = path_of("captions");
    spec.template_text = j.value("template", std::string(kDefaultPromptTemplate));
    spec.metric = j.value("metric", std::string(spec.task == TaskKind::classification ? "accuracy" : "recall_at_1"));
    spec.split = j.value("split", std::string());
    if (j.contains("direction")) {
      const auto dir = task_kind_from_string(j.at("direction").get<std::string>());
      if (spec.task != TaskKind::reconstruction && spec.task != TaskKind::classification) spec.task = dir;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed task spec: ") + e.what());
  }
  return spec;
}

PreparedTask prepare_task(const TaskSpec& spec, const EmbeddingSet& audio) {
  switch (spec.task) {
    case TaskKind::reconstruction: {
      if (spec.manifest.empty() || spec.split.empty()) return {audio, nullptr, "none"};
      const DatasetManifest manifest = read_manifest(spec.manifest);
      std::vector<std::size_t> rows;
      for (const ManifestEntry* e : manifest.in_split(spec.split)) {
        const auto row = audio.index_of(e->id);
        if (!row) throw ValidationError("manifest id has no embedding: " + e->id);
        rows.push_back(*row);
      }
      if (rows.empty()) throw ValidationError("no manifest entries in split '" + spec.split + "'");
      return {audio.select(rows), nullptr, "none"};
    }
    case TaskKind::classification: {
      if (spec.manifest.empty() || spec.prompts.empty()) {
        throw ValidationError("classification task needs manifest and prompts");
      }
      auto data = std::make_shared<ClassificationData>(load_classification(
          audio, read_manifest(spec.manifest), read_embedding_set(spec.prompts), spec.template_text, spec.split));
      const std::string metric_name = spec.metric;
      // Fail early on an unknown metric name.
      if (metric_name != "accuracy" && metric_name != "macro_f1" && metric_name != "f1" &&
          metric_name != "micro_f1" && metric_name != "map") {
        throw ValidationError("unknown classification metric: " + metric_name);
      }
      CodeMetric fn = [data, metric_name](const std::vector<SparseCodeRecord>& codes, const ConceptVocabulary& vocab) {
        const auto preds = classify(codes, vocab, data->prompts);
        std::vector<std::size_t> all(preds.size());
        std::iota(all.begin(), all.end(), 0);
        return classification_metric(metric_name, preds, *data, all).value_or(std::numeric_limits<double>::quiet_NaN());
      };
      return {audio.select(data->rows), std::move(fn), metric_name};
    }
    case TaskKind::audio_text_retrieval:
    case TaskKind::text_audio_retrieval: {
      if (spec.manifest.empty() || spec.captions.empty()) {
        throw ValidationError("retrieval task needs manifest and captions");
      }
      auto data = std::make_shared<RetrievalData>(
          load_retrieval(audio, read_manifest(spec.manifest), read_embedding_set(spec.captions), spec.split));
      const std::string metric_name = spec.metric;
      if (metric_name != "recall_at_1" && metric_name != "map_at_10") {
        throw ValidationError("unknown retrieval metric: " + metric_name);
      }
      const TaskKind direction = spec.task;
      CodeMetric fn = [data, metric_name, direction](const std::vector<SparseCodeRecord>& codes,
                                                      const ConceptVocabulary& vocab) {
        Eigen::MatrixXd reps(static_cast<Eigen::Index>(codes.size()), static_cast<Eigen::Index>(vocab.dim()));
        for (std::size_t i = 0; i < codes.size(); ++i) reps.row(static_cast<Eigen::Index>(i)) = reconstruct(codes[i], vocab);
        const RetrievalResult r = evaluate_retrieval(*data, reps, direction);
        return metric_name == "recall_at_1" ? r.recall_at_1 : r.map_at_10;
      };
      return {audio.select(data->audio_rows), std::move(fn), metric_name};
    }
  }
  throw ValidationError("unsupported task");
}

namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double parse_double(const std::string& s) {
  if (s == "nan" || s.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

}  // namespace

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "lambda,vocabulary_id,vocab_size,mean_l0,metric,mean_reconstruction_cosine\n";
  for (const auto& r : rows) {
    out += format_double(r.lambda) + "," + r.vocabulary_id + "," + std::to_string(r.vocab_size) + "," +
           format_double(r.mean_l0) + "," + format_double(r.metric) + "," +
           format_double(r.mean_reconstruction_cosine) + "\n";
  }
  return out;
}

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("malformed CSV: empty sweep file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "lambda,vocabulary_id,vocab_size,mean_l0,metric,mean_reconstruction_cosine") {
    throw FormatError("malformed CSV: unexpected sweep header '" + line + "'");
  }
  std::vector<SweepRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 6) throw FormatError("malformed CSV: line " + std::to_string(lineno) + " has wrong field count");
    try {
      rows.push_back({parse_double(f[0]), f[1], static_cast<std::size_t>(std::stoull(f[2])), parse_double(f[3]),
                      parse_double(f[4]), parse_double(f[5])});
    } catch (const std::exception&) {
      throw FormatError("malformed CSV: bad number on line " + std::to_string(lineno));
    }
    if (std::isnan(rows.back().lambda)) throw FormatError("malformed CSV: missing lambda on line " + std::to_string(lineno));
  }
  if (rows.empty()) throw FormatError("malformed CSV: no data rows");
  return rows;
}

}  // namespace concept_lens
