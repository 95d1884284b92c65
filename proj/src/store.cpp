#include "concept_lens/store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "concept_lens/errors.hpp"

namespace concept_lens {

namespace fs = std::filesystem;
using nlohmann::json;

EmbeddingSet::EmbeddingSet(std::vector<std::string> ids, std::size_t dim, std::vector<float> data, bool normalized,
                           json extra)
    : ids_(std::move(ids)), dim_(dim), data_(std::move(data)), normalized_(normalized), extra_(std::move(extra)) {
  if (ids_.empty()) throw ValidationError("empty set");
  if (dim_ == 0) throw ValidationError("dimension must be >= 1");
  if (data_.size() != ids_.size() * dim_) {
    throw ValidationError("data has " + std::to_string(data_.size()) + " values, expected count*dim = " +
                          std::to_string(ids_.size() * dim_));
  }
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) throw ValidationError("duplicate id: " + ids_[i]);
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    double sq = 0.0;
    for (float v : row(i)) {
      if (!std::isfinite(v)) throw ValidationError("non-finite value (NaN/Inf) in row " + ids_[i]);
      sq += static_cast<double>(v) * v;
    }
    if (normalized_ && std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance) {
      throw ValidationError("normalization flag violated: row " + ids_[i] + " has norm " +
                            std::to_string(std::sqrt(sq)));
    }
  }
  if (!extra_.is_object()) throw ValidationError("extra metadata must be a JSON object");
}

std::optional<std::size_t> EmbeddingSet::index_of(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Eigen::VectorXd EmbeddingSet::row_vector(std::size_t i) const {
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim_));
  auto r = row(i);
  for (std::size_t k = 0; k < dim_; ++k) v[static_cast<Eigen::Index>(k)] = r[k];
  return v;
}

Eigen::MatrixXd EmbeddingSet::columns_as_double() const { return matrix().transpose().cast<double>(); }

EmbeddingSet EmbeddingSet::select(std::span<const std::size_t> rows) const {
  std::vector<std::string> ids;
  std::vector<float> data;
  ids.reserve(rows.size());
  data.reserve(rows.size() * dim_);
  for (std::size_t r : rows) {
    if (r >= count()) throw ValidationError("row index out of range in select");
    ids.push_back(ids_[r]);
    auto v = row(r);
    data.insert(data.end(), v.begin(), v.end());
  }
  return EmbeddingSet(std::move(ids), dim_, std::move(data), normalized_, extra_);
}

// ---------------------------------------------------------------------------

void write_text_file(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + file.string());
  out << text;
  if (!out) throw IoError("write failed: " + file.string());
}

std::string read_text_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json_file(const fs::path& file) {
  const std::string text = read_text_file(file);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("malformed JSON in " + file.string() + ": " + e.what());
  }
}

void write_f32_blob(const fs::path& file, std::span<const float> values) {
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t w = std::bit_cast<std::uint32_t>(values[i]);
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
    words[i] = w;
  }
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + file.string());
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw IoError("write failed: " + file.string());
}

std::vector<float> read_f32_blob(const fs::path& file) {
  std::error_code ec;
  const auto bytes = fs::file_size(file, ec);
  if (ec) throw IoError("cannot stat " + file.string());
  if (bytes % 4 != 0) throw FormatError("size mismatch: " + file.string() + " is not a whole number of float32");
  std::vector<std::uint32_t> words(bytes / 4);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + file.string());
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed: " + file.string());
  std::vector<float> values(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::uint32_t w = words[i];
    if constexpr (std::endian::native == std::endian::big) w = __builtin_bswap32(w);
    values[i] = std::bit_cast<float>(w);
  }
  return values;
}

void write_embedding_set(const EmbeddingSet& set, const fs::path& dir) {
  if (set.count() == 0) throw ValidationError("empty set");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  json meta = {
      {"format", kEmbeddingFormat}, {"ids", set.ids()},     {"dim", set.dim()},
      {"count", set.count()},       {"normalized", set.normalized()}, {"extra", set.extra()},
  };
  write_f32_blob(dir / "data.f32", set.data());
  write_text_file(dir / "meta.json", meta.dump(1) + "\n");
}

EmbeddingSet read_embedding_set(const fs::path& dir) {
  const json meta = read_json_file(dir / "meta.json");
  std::vector<std::string> ids;
  std::size_t dim = 0, count = 0;
  bool normalized = false;
  json extra = json::object();
  try {
    if (meta.at("format").get<std::string>() != kEmbeddingFormat) {
      throw FormatError("unsupported store format in " + dir.string());
    }
    ids = meta.at("ids").get<std::vector<std::string>>();
    dim = meta.at("dim").get<std::size_t>();
    count = meta.at("count").get<std::size_t>();
    normalized = meta.at("normalized").get<bool>();
    if (meta.contains("extra")) extra = meta.at("extra");
  } catch (const json::exception& e) {
    throw FormatError("malformed meta in " + dir.string() + ": " + e.what());
  }
  if (ids.size() != count) throw FormatError("meta count does not match id list in " + dir.string());
  std::vector<float> data = read_f32_blob(dir / "data.f32");
  if (data.size() != count * dim) {
    throw FormatError("size mismatch: data.f32 holds " + std::to_string(data.size()) + " floats, meta declares " +
                      std::to_string(count) + "x" + std::to_string(dim));
  }
  return EmbeddingSet(std::move(ids), dim, std::move(data), normalized, std::move(extra));
}

EmbeddingSet l2_normalize(const EmbeddingSet& set) {
  std::vector<float> data(set.data().size());
  for (std::size_t i = 0; i < set.count(); ++i) {
    auto r = set.row(i);
    double sq = 0.0;
    for (float v : r) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (norm == 0.0) throw ValidationError("zero-norm row cannot be normalized: " + set.id(i));
    for (std::size_t k = 0; k < set.dim(); ++k) data[i * set.dim() + k] = static_cast<float>(r[k] / norm);
  }
  return EmbeddingSet(set.ids(), set.dim(), std::move(data), true, set.extra());
}

// ---------------------------------------------------------------------------

bool is_valid_split_name(const std::string& split) {
  static const std::regex fold("fold-[0-9]+");
  return split == "dev" || split == "eval" || std::regex_match(split, fold);
}

void DatasetManifest::validate(ManifestKind kind) const {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.id.empty()) throw ValidationError("manifest entry with empty id");
    if (!seen.insert(e.id).second) throw ValidationError("duplicate manifest id: " + e.id);
    if (!is_valid_split_name(e.split)) throw ValidationError("invalid split '" + e.split + "' for " + e.id);
    if (kind == ManifestKind::classification && e.labels.empty()) {
      throw ValidationError("manifest entry without labels: " + e.id);
    }
    if (kind == ManifestKind::retrieval && e.captions.empty()) {
      throw ValidationError("manifest entry without captions: " + e.id);
    }
  }
}

std::vector<std::string> DatasetManifest::splits() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.split);
  return {s.begin(), s.end()};
}

std::vector<const ManifestEntry*> DatasetManifest::in_split(const std::string& split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (split.empty() || e.split == split) out.push_back(&e);
  }
  return out;
}

const ManifestEntry* DatasetManifest::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id == id) return &e;
  }
  return nullptr;
}

std::vector<std::string> DatasetManifest::label_set() const {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.labels.begin(), e.labels.end());
  return {s.begin(), s.end()};
}

namespace {

template <typename Fn>
void for_each_json_line(const fs::path& file, Fn&& fn) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + file.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(file.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

DatasetManifest read_manifest(const fs::path& file) {
  DatasetManifest m;
  for_each_json_line(file, [&](const json& j) {
    ManifestEntry e;
    e.id = j.at("id").get<std::string>();
    e.split = j.at("split").get<std::string>();
    if (j.contains("labels")) e.labels = j.at("labels").get<std::vector<std::string>>();
    if (j.contains("captions")) e.captions = j.at("captions").get<std::vector<std::string>>();
    m.entries.push_back(std::move(e));
  });
  m.validate();
  return m;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& file) {
  manifest.validate();
  std::string text;
  for (const auto& e : manifest.entries) {
    json j = {{"id", e.id}, {"split", e.split}, {"labels", e.labels}};
    if (!e.captions.empty()) j["captions"] = e.captions;
    text += j.dump() + "\n";
  }
  write_text_file(file, text);
}

// ---------------------------------------------------------------------------

void SparseCodeRecord::validate(std::optional<std::size_t> vocabulary_size) const {
  if (indices.size() != weights.size()) throw ValidationError("sparse code indices/weights length differ");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("sparse code lambda must be >= 0");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i > 0 && indices[i] <= indices[i - 1]) throw ValidationError("sparse code indices not strictly increasing");
    if (vocabulary_size && indices[i] >= *vocabulary_size) throw ValidationError("sparse code index out of bounds");
    if (!(weights[i] > 0.0) || !std::isfinite(weights[i])) {
      throw ValidationError("sparse code weights must be finite and strictly positive");
    }
  }
}

Eigen::VectorXd SparseCodeRecord::dense(std::size_t vocabulary_size) const {
  validate(vocabulary_size);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocabulary_size));
  for (std::size_t i = 0; i < indices.size(); ++i) w[indices[i]] = weights[i];
  return w;
}

SparseCodeRecord SparseCodeRecord::from_dense(std::string embedding_id, std::string vocabulary_id, double lambda,
                                              const Eigen::Ref<const Eigen::VectorXd>& weights) {
  SparseCodeRecord r{std::move(embedding_id), std::move(vocabulary_id), lambda, {}, {}};
  for (Eigen::Index j = 0; j < weights.size(); ++j) {
    if (weights[j] > 0.0) {
      r.indices.push_back(static_cast<std::uint32_t>(j));
      r.weights.push_back(weights[j]);
    }
  }
  return r;
}

json to_json(const SparseCodeRecord& r) {
  return {{"embedding_id", r.embedding_id}, {"vocabulary_id", r.vocabulary_id}, {"lambda", r.lambda},
          {"indices", r.indices},           {"weights", r.weights}};
}

SparseCodeRecord sparse_code_from_json(const json& j) {
  SparseCodeRecord r;
  r.embedding_id = j.at("embedding_id").get<std::string>();
  r.vocabulary_id = j.at("vocabulary_id").get<std::string>();
  r.lambda = j.at("lambda").get<double>();
  r.indices = j.at("indices").get<std::vector<std::uint32_t>>();
  r.weights = j.at("weights").get<std::vector<double>>();
  r.validate();
  return r;
}

std::vector<SparseCodeRecord> read_sparse_codes(const fs::path& file) {
  std::vector<SparseCodeRecord> out;
  for_each_json_line(file, [&](const json& j) { out.push_back(sparse_code_from_json(j)); });
  return out;
}

void write_sparse_codes(std::span<const SparseCodeRecord> codes, const fs::path& file) {
  std::string text;
  for (const auto& c : codes) {
    c.validate();
    text += to_json(c).dump() + "\n";
  }
  write_text_file(file, text);
}

}  // namespace concept_lens
