#include "concept_lens/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "concept_lens/errors.hpp"
#include "concept_lens/random.hpp"

namespace concept_lens {

namespace {

std::string padded(const char* prefix, std::size_t i, std::size_t total) {
  const int width = static_cast<int>(std::to_string(total > 0 ? total - 1 : 0).size());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

std::vector<float> to_float_row(const Eigen::VectorXd& v) {
  std::vector<float> out(static_cast<std::size_t>(v.size()));
  for (Eigen::Index k = 0; k < v.size(); ++k) out[static_cast<std::size_t>(k)] = static_cast<float>(v[k]);
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  if (dim == 0 || concepts == 0 || samples == 0) throw ValidationError("dim, concepts and samples must be >= 1");
  if (sparsity == 0) throw ValidationError("sparsity must be >= 1");
  if (sparsity > concepts) throw ValidationError("sparsity k must not exceed the number of concepts");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ValidationError("noise must be >= 0");
  if (!(weight_min > 0.0) || !(weight_max >= weight_min)) throw ValidationError("need 0 < weight_min <= weight_max");
  if (classes > 0) {
    if (classes > concepts) throw ValidationError("more classes than concepts");
    if (sparsity > concepts / classes) throw ValidationError("sparsity exceeds the concepts available per class");
  }
}

SynthDataset make_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const std::size_t c = cfg.concepts;

  // Concepts, rounded through float32 so the embeddings are built from exactly
  // the stored dictionary.
  std::vector<std::string> concept_ids;
  std::vector<float> concept_data;
  Eigen::MatrixXd C(d, static_cast<Eigen::Index>(c));
  for (std::size_t j = 0; j < c; ++j) {
    Eigen::VectorXd v(d);
    for (Eigen::Index k = 0; k < d; ++k) v[k] = standard_normal(rng);
    v.normalize();
    const auto row = to_float_row(v);
    concept_data.insert(concept_data.end(), row.begin(), row.end());
    for (Eigen::Index k = 0; k < d; ++k) C(k, static_cast<Eigen::Index>(j)) = row[static_cast<std::size_t>(k)];
    concept_ids.push_back(padded("concept_", j, c));
  }
  EmbeddingSet concept_set(concept_ids, cfg.dim, std::move(concept_data), true,
                           {{"vocabulary_id", cfg.vocabulary_id}, {"construction", "baseline"}});
  ConceptVocabulary vocab{cfg.vocabulary_id, concept_ids, std::move(concept_set), Construction::baseline};

  const std::size_t group = cfg.classes > 0 ? c / cfg.classes : c;
  std::vector<std::string> audio_ids;
  std::vector<float> audio_data;
  DatasetManifest manifest;
  std::vector<SparseCodeRecord> truth;
  std::map<std::string, Eigen::VectorXd> label_vectors;
  std::map<std::string, Eigen::VectorXd> caption_vectors;
  std::vector<std::size_t> pool(group);

  for (std::size_t i = 0; i < cfg.samples; ++i) {
    const std::size_t cls = cfg.classes > 0 ? i % cfg.classes : 0;
    const std::size_t offset = cls * group;
    std::iota(pool.begin(), pool.end(), offset);
    for (std::size_t s = 0; s < cfg.sparsity; ++s) {
      std::swap(pool[s], pool[s + uniform_index(rng, group - s)]);
    }
    std::vector<std::size_t> support(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(cfg.sparsity));
    std::sort(support.begin(), support.end());

    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c));
    for (std::size_t j : support) w[static_cast<Eigen::Index>(j)] = uniform_real(rng, cfg.weight_min, cfg.weight_max);
    Eigen::VectorXd z = C * w;
    const double sigma = cfg.noise / std::sqrt(static_cast<double>(cfg.dim));
    for (Eigen::Index k = 0; k < d; ++k) z[k] += sigma * standard_normal(rng);
    const double norm = z.norm();
    if (norm == 0.0) throw Error("synthetic embedding collapsed to zero");
    z /= norm;

    const std::string id = padded("sample_", i, cfg.samples);
    const auto row = to_float_row(z);
    audio_data.insert(audio_data.end(), row.begin(), row.end());
    audio_ids.push_back(id);

    std::string label;
    if (cfg.classes > 0) {
      label = padded("class_", cls, cfg.classes);
      if (!label_vectors.count(label)) {
        Eigen::VectorXd proto = C.middleCols(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(group)).rowwise().sum();
        label_vectors.emplace(label, proto.normalized());
      }
    } else {
      Eigen::Index dominant = 0;
      w.maxCoeff(&dominant);
      label = concept_ids[static_cast<std::size_t>(dominant)];
      if (!label_vectors.count(label)) label_vectors.emplace(label, C.col(dominant));
    }

    std::string caption;
    Eigen::VectorXd caption_vec = Eigen::VectorXd::Zero(d);
    for (std::size_t j : support) {
      if (!caption.empty()) caption += " and ";
      caption += concept_ids[j];
      caption_vec += C.col(static_cast<Eigen::Index>(j));
    }
    caption_vectors.emplace(caption, caption_vec.normalized());

    manifest.entries.push_back({id, i % 4 == 3 ? "eval" : "dev", {label}, {caption}});
    truth.push_back(SparseCodeRecord::from_dense(id, cfg.vocabulary_id, 0.0, w / norm));
  }

  auto to_store = [&](const std::map<std::string, Eigen::VectorXd>& vectors, bool expand) {
    std::vector<std::string> ids;
    std::vector<float> data;
    for (const auto& [key, vec] : vectors) {
      ids.push_back(expand ? expand_template(cfg.template_text, key) : key);
      const auto row = to_float_row(vec);
      data.insert(data.end(), row.begin(), row.end());
    }
    return l2_normalize(EmbeddingSet(std::move(ids), cfg.dim, std::move(data), false));
  };

  SynthDataset out{std::move(vocab),
                   l2_normalize(EmbeddingSet(std::move(audio_ids), cfg.dim, std::move(audio_data), false)),
                   std::move(manifest),
                   std::move(truth),
                   to_store(label_vectors, true),
                   to_store(caption_vectors, false)};
  out.audio.set_extra({{"source", "synthetic"}, {"seed", cfg.seed}});
  return out;
}

void write_synthetic(const SynthDataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  write_vocabulary(data.vocab, dir / "vocab");
  write_embedding_set(data.audio, dir / "audio");
  write_embedding_set(data.prompts, dir / "prompts");
  write_embedding_set(data.captions, dir / "captions");
  write_manifest(data.manifest, dir / "manifest.jsonl");
  write_sparse_codes(data.truth, dir / "truth.jsonl");
}

}  // namespace concept_lens
