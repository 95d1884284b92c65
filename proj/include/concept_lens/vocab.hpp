#pragma once

// Concept vocabulary construction from audio-tag frequency tables:
// baseline (top-k by frequency), pruned (filtered and synonym-merged) and
// clustered (k-means representatives over tag text embeddings).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "concept_lens/store.hpp"

namespace concept_lens {

struct TagCount {
  std::string tag;
  std::uint64_t count = 0;
};

struct TagFrequencyTable {
  std::vector<TagCount> entries;

  void validate() const;
  // Descending count, ties broken by tag ascending.
  std::vector<TagCount> sorted() const;
};

// CSV "tag,count"; a leading header row "tag,count" is skipped. Fields may be
// double-quoted.
TagFrequencyTable read_tag_table(const std::filesystem::path& file);

// One entry per line; blank lines and surrounding whitespace ignored.
std::set<std::string> read_word_set(const std::filesystem::path& file);

using SynonymGroups = std::vector<std::set<std::string>>;

// One comma-separated group per line.
SynonymGroups read_synonym_groups(const std::filesystem::path& file);
void write_synonym_groups(const SynonymGroups& groups, const std::filesystem::path& file);

// Suffix-stripping stem: removes "ing", "ed", "es" or "s" and undoes
// consonant doubling ("running" -> "run").
std::string stem(const std::string& word);

// Groups of two or more tags sharing a stem, in first-appearance order.
SynonymGroups propose_stem_groups(const std::vector<std::string>& tags);

bool is_single_letter(const std::string& tag);
bool is_numeric(const std::string& tag);

// `size` most frequent tags after removing blocklisted entries and, when a
// wordlist is given, tags not in it.
std::vector<std::string> build_baseline(const TagFrequencyTable& table, const std::set<std::string>& blocklist,
                                        std::size_t size,
                                        const std::optional<std::set<std::string>>& wordlist = std::nullopt);

struct PrunedOptions {
  std::set<std::string> blocklist;
  std::optional<std::set<std::string>> wordlist;
};

struct PrunedConcept {
  std::string tag;
  std::uint64_t count = 0;  // aggregated over the merged group
};

// Restricts to the `pool` most frequent tags, drops single-letter, numeric,
// blocklisted and (with a wordlist) misspelled tags, merges each synonym group
// into its most frequent surviving member with summed counts, and returns the
// `size` most frequent representatives.
std::vector<PrunedConcept> build_pruned_with_counts(const TagFrequencyTable& table, const SynonymGroups& groups,
                                                    std::size_t size, std::size_t pool,
                                                    const PrunedOptions& options = {});
std::vector<std::string> build_pruned(const TagFrequencyTable& table, const SynonymGroups& groups, std::size_t size,
                                      std::size_t pool, const PrunedOptions& options = {});

struct KMeansResult {
  std::vector<std::size_t> assignments;
  Eigen::MatrixXd centroids;  // k x d
  double inertia = 0.0;
  // Inertia after every assignment step.
  std::vector<double> inertia_trace;
  int iterations = 0;
};

// Lloyd's algorithm with k-means++ seeding. Points are the rows of `points`.
// Empty clusters are re-seeded on the point farthest from its centroid.
KMeansResult kmeans(const Eigen::MatrixXd& points, std::size_t k, std::uint64_t seed, int max_iters = 300);

// Runs kmeans on the pool and returns, per cluster, the member closest to the
// centroid. Exactly k distinct pool ids.
std::vector<std::string> build_clustered(const EmbeddingSet& pool, std::size_t k, std::uint64_t seed,
                                         int max_iters = 300);

enum class Construction { baseline, pruned, clustered };
std::string to_string(Construction c);
Construction construction_from_string(const std::string& s);

struct ConceptVocabulary {
  std::string vocabulary_id;
  std::vector<std::string> concepts;
  EmbeddingSet embeddings;  // one normalized row per concept, same order
  Construction construction = Construction::baseline;

  std::size_t size() const { return concepts.size(); }
  std::size_t dim() const { return embeddings.dim(); }
  void validate() const;
  // d x c dictionary.
  Eigen::MatrixXd matrix() const { return embeddings.columns_as_double(); }
};

// Looks the concepts up in a text-embedding store (ids = concept strings) and
// normalizes them.
ConceptVocabulary make_vocabulary(std::string vocabulary_id, const std::vector<std::string>& concepts,
                                  const EmbeddingSet& text_embeddings, Construction construction);

// Directory layout: embedding store (meta.json + data.f32) plus concepts.txt.
void write_vocabulary(const ConceptVocabulary& vocab, const std::filesystem::path& dir);
ConceptVocabulary read_vocabulary(const std::filesystem::path& dir);
void write_concept_list(const std::vector<std::string>& concepts, const std::filesystem::path& file);
std::vector<std::string> read_concept_list(const std::filesystem::path& file);

}  // namespace concept_lens
