#pragma once

// Planted sparse-code datasets: random unit concepts, embeddings built as
// normalize(C w_true + noise), with labels, prompts and captions derived from
// the planted supports.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "concept_lens/evaluator.hpp"
#include "concept_lens/store.hpp"
#include "concept_lens/vocab.hpp"

namespace concept_lens {

struct SynthConfig {
  std::size_t dim = 64;
  std::size_t concepts = 128;
  std::size_t samples = 200;
  std::size_t sparsity = 5;
  // Expected L2 norm of the additive Gaussian noise vector.
  double noise = 0.01;
  std::uint64_t seed = 0;
  // 0: label = dominant planted concept. >0: concepts are split into this many
  // disjoint groups and each sample draws its support from one group.
  std::size_t classes = 0;
  double weight_min = 1.0;
  double weight_max = 2.0;
  std::string template_text = kDefaultPromptTemplate;
  std::string vocabulary_id = "synthetic";

  void validate() const;
};

struct SynthDataset {
  ConceptVocabulary vocab;
  EmbeddingSet audio;
  DatasetManifest manifest;             // every 4th sample is "eval", the rest "dev"
  std::vector<SparseCodeRecord> truth;  // planted codes scaled to the normalized embedding
  EmbeddingSet prompts;                 // one row per label, id = expanded template
  EmbeddingSet captions;                // one row per distinct caption text
};

SynthDataset make_synthetic(const SynthConfig& cfg);

// Layout: vocab/ audio/ prompts/ captions/ manifest.jsonl truth.jsonl
void write_synthetic(const SynthDataset& data, const std::filesystem::path& dir);

}  // namespace concept_lens
