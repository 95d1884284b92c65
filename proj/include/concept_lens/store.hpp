#pragma once

// Persistence for embedding sets, dataset manifests and sparse codes.
//
// An embedding store is a directory holding
//   meta.json  {"format": "cemb-1", "ids": [...], "dim": d, "count": n,
//               "normalized": bool, "extra": {...}}
//   data.f32   n*d little-endian float32 values, row-major, one row per id.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace concept_lens {

inline constexpr const char* kEmbeddingFormat = "cemb-1";
inline constexpr double kUnitNormTolerance = 1e-5;

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class EmbeddingSet {
 public:
  EmbeddingSet() = default;

  // Validates every invariant; throws ValidationError on violation.
  EmbeddingSet(std::vector<std::string> ids, std::size_t dim, std::vector<float> data, bool normalized,
               nlohmann::json extra = nlohmann::json::object());

  const std::vector<std::string>& ids() const { return ids_; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return ids_.size(); }
  bool normalized() const { return normalized_; }
  const std::vector<float>& data() const { return data_; }
  const nlohmann::json& extra() const { return extra_; }
  void set_extra(nlohmann::json extra) { extra_ = std::move(extra); }

  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  std::optional<std::size_t> index_of(const std::string& id) const;
  const std::string& id(std::size_t i) const { return ids_[i]; }

  // count x dim view of the payload.
  Eigen::Map<const RowMatrixF> matrix() const {
    return Eigen::Map<const RowMatrixF>(data_.data(), static_cast<Eigen::Index>(count()),
                                        static_cast<Eigen::Index>(dim_));
  }
  // Row i widened to double.
  Eigen::VectorXd row_vector(std::size_t i) const;
  // dim x count matrix whose columns are the rows of this set (the dictionary
  // layout used by the solver).
  Eigen::MatrixXd columns_as_double() const;

  // Subset in the given order.
  EmbeddingSet select(std::span<const std::size_t> rows) const;

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> data_;
  bool normalized_ = false;
  nlohmann::json extra_ = nlohmann::json::object();
  std::unordered_map<std::string, std::size_t> index_;
};

void write_embedding_set(const EmbeddingSet& set, const std::filesystem::path& dir);
EmbeddingSet read_embedding_set(const std::filesystem::path& dir);

// Scales every row to unit L2 norm (computed in double). Throws
// ValidationError naming the first zero-norm row.
EmbeddingSet l2_normalize(const EmbeddingSet& set);

// Raw float32 little-endian blob helpers, shared with the projection store.
void write_f32_blob(const std::filesystem::path& file, std::span<const float> values);
std::vector<float> read_f32_blob(const std::filesystem::path& file);

nlohmann::json read_json_file(const std::filesystem::path& file);
void write_text_file(const std::filesystem::path& file, const std::string& text);
std::string read_text_file(const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Dataset manifest (JSON Lines).

struct ManifestEntry {
  std::string id;
  std::string split;  // "dev", "eval" or "fold-<k>"
  std::vector<std::string> labels;
  std::vector<std::string> captions;
};

enum class ManifestKind { any, classification, retrieval };

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  // Throws ValidationError on duplicate ids, malformed split names, or (per
  // kind) entries missing labels / captions.
  void validate(ManifestKind kind = ManifestKind::any) const;

  std::vector<std::string> splits() const;
  // Entries whose split equals `split`; an empty string selects everything.
  std::vector<const ManifestEntry*> in_split(const std::string& split) const;
  const ManifestEntry* find(const std::string& id) const;
  // Sorted, de-duplicated labels over all entries.
  std::vector<std::string> label_set() const;
};

bool is_valid_split_name(const std::string& split);

DatasetManifest read_manifest(const std::filesystem::path& file);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);

// ---------------------------------------------------------------------------
// Sparse codes (JSON Lines).

struct SparseCodeRecord {
  std::string embedding_id;
  std::string vocabulary_id;
  double lambda = 0.0;
  std::vector<std::uint32_t> indices;  // strictly increasing
  std::vector<double> weights;         // strictly positive, same length

  std::size_t l0() const { return indices.size(); }
  // Throws ValidationError if indices/weights break the record invariants.
  void validate(std::optional<std::size_t> vocabulary_size = std::nullopt) const;
  Eigen::VectorXd dense(std::size_t vocabulary_size) const;

  static SparseCodeRecord from_dense(std::string embedding_id, std::string vocabulary_id, double lambda,
                                     const Eigen::Ref<const Eigen::VectorXd>& weights);
};

nlohmann::json to_json(const SparseCodeRecord& record);
SparseCodeRecord sparse_code_from_json(const nlohmann::json& j);

std::vector<SparseCodeRecord> read_sparse_codes(const std::filesystem::path& file);
void write_sparse_codes(std::span<const SparseCodeRecord> codes, const std::filesystem::path& file);

}  // namespace concept_lens
