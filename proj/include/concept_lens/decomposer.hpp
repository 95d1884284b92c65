#pragma once

// Sparse concept decompositions of embedding sets, reconstructions, top-k
// concept reports and class-level prominence profiles.

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "concept_lens/solver.hpp"
#include "concept_lens/store.hpp"
#include "concept_lens/vocab.hpp"

namespace concept_lens {

struct ConceptReport {
  std::string embedding_id;
  std::vector<std::pair<std::string, double>> top;  // prominence descending
  std::size_t l0 = 0;
  double reconstruction_cosine = 0.0;
  bool empty() const { return l0 == 0; }
};

struct ClassProfile {
  std::string class_label;
  std::size_t sample_count = 0;
  Eigen::VectorXd mean_prominence;
};

// Binds a vocabulary and solver settings; the dictionary is validated once and
// shared read-only by every decomposition.
class Decomposer {
 public:
  Decomposer(const ConceptVocabulary& vocab, SolverConfig cfg);

  const ConceptVocabulary& vocabulary() const { return *vocab_; }
  const Dictionary& dictionary() const { return dict_; }
  const SolverConfig& config() const { return cfg_; }

  // z is normalized (in double) before solving.
  SparseCodeRecord decompose(const Eigen::VectorXd& z, std::string embedding_id) const;
  SparseCodeRecord decompose(const EmbeddingSet& set, std::size_t row) const;
  // Output order equals input order for any thread count.
  std::vector<SparseCodeRecord> decompose_all(const EmbeddingSet& set, unsigned threads = 1) const;

 private:
  const ConceptVocabulary* vocab_;
  Dictionary dict_;
  SolverConfig cfg_;
};

SparseCodeRecord decompose(const EmbeddingSet& set, const std::string& embedding_id, const ConceptVocabulary& vocab,
                           const SolverConfig& cfg);

// C w (dense, not normalized). Throws ValidationError when the code belongs to
// another vocabulary.
Eigen::VectorXd reconstruct(const SparseCodeRecord& code, const ConceptVocabulary& vocab);

// Cosine between two vectors; 0 when either is the zero vector.
double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

ConceptReport report(const SparseCodeRecord& code, const ConceptVocabulary& vocab, const Eigen::VectorXd& original_z,
                     std::size_t k);
nlohmann::json to_json(const ConceptReport& report);

ClassProfile class_profile(const std::vector<SparseCodeRecord>& codes, const std::string& label, std::size_t c);

// One profile per label (sorted) over the codes whose manifest entry carries
// that label. Codes without a manifest entry are ignored.
std::vector<ClassProfile> class_profiles(const std::vector<SparseCodeRecord>& codes, const DatasetManifest& manifest,
                                         std::size_t c);

// CSV "concept,mean_prominence", sorted descending (ties by concept).
void write_class_profile_csv(const ClassProfile& profile, const ConceptVocabulary& vocab,
                             const std::filesystem::path& file);

}  // namespace concept_lens
