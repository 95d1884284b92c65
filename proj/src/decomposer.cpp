#include "concept_lens/decomposer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "concept_lens/errors.hpp"
#include "concept_lens/log.hpp"
#include "concept_lens/parallel.hpp"

namespace concept_lens {

Decomposer::Decomposer(const ConceptVocabulary& vocab, SolverConfig cfg)
    : vocab_(&vocab), dict_(vocab.matrix()), cfg_(cfg) {
  vocab.validate();
  cfg_.validate();
}

SparseCodeRecord Decomposer::decompose(const Eigen::VectorXd& z, std::string embedding_id) const {
  if (z.size() != dict_.dim()) {
    throw ValidationError("dimension mismatch: embedding has length " + std::to_string(z.size()) +
                          ", vocabulary dimension is " + std::to_string(dict_.dim()));
  }
  const double norm = z.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw ValidationError("cannot decompose zero or non-finite embedding: " + embedding_id);
  }
  const Eigen::VectorXd unit = z / norm;
  const SparseSolution sol = solve(dict_, unit, cfg_);
  if (!sol.converged()) {
    log::warn("solver_not_converged", {{"embedding_id", embedding_id}, {"sweeps", sol.sweeps_used},
                                       {"kkt_residual", sol.kkt_residual}});
  }
  return SparseCodeRecord::from_dense(std::move(embedding_id), vocab_->vocabulary_id, cfg_.lambda, sol.weights);
}

SparseCodeRecord Decomposer::decompose(const EmbeddingSet& set, std::size_t row) const {
  return decompose(set.row_vector(row), set.id(row));
}

std::vector<SparseCodeRecord> Decomposer::decompose_all(const EmbeddingSet& set, unsigned threads) const {
  std::vector<SparseCodeRecord> out(set.count());
  parallel_for(set.count(), threads, [&](std::size_t i) { out[i] = decompose(set, i); });
  const auto empty = std::count_if(out.begin(), out.end(), [](const SparseCodeRecord& r) { return r.l0() == 0; });
  if (empty > 0) {
    log::warn("empty_decompositions", {{"count", empty}, {"total", out.size()}, {"lambda", cfg_.lambda},
                                       {"vocabulary_id", vocab_->vocabulary_id}});
  }
  return out;
}

SparseCodeRecord decompose(const EmbeddingSet& set, const std::string& embedding_id, const ConceptVocabulary& vocab,
                           const SolverConfig& cfg) {
  const auto row = set.index_of(embedding_id);
  if (!row) throw ValidationError("unknown embedding id: " + embedding_id);
  return Decomposer(vocab, cfg).decompose(set, *row);
}

Eigen::VectorXd reconstruct(const SparseCodeRecord& code, const ConceptVocabulary& vocab) {
  if (code.vocabulary_id != vocab.vocabulary_id) {
    throw ValidationError("vocabulary mismatch: code uses '" + code.vocabulary_id + "', vocabulary is '" +
                          vocab.vocabulary_id + "'");
  }
  code.validate(vocab.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.dim()));
  for (std::size_t i = 0; i < code.indices.size(); ++i) {
    const auto row = vocab.embeddings.row(code.indices[i]);
    for (std::size_t k = 0; k < row.size(); ++k) out[static_cast<Eigen::Index>(k)] += code.weights[i] * row[k];
  }
  return out;
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

ConceptReport report(const SparseCodeRecord& code, const ConceptVocabulary& vocab, const Eigen::VectorXd& original_z,
                     std::size_t k) {
  if (k == 0) throw ValidationError("top-k requires k >= 1");
  ConceptReport rep;
  rep.embedding_id = code.embedding_id;
  rep.l0 = code.l0();
  std::vector<std::size_t> order(code.l0());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (code.weights[a] != code.weights[b]) return code.weights[a] > code.weights[b];
    return vocab.concepts[code.indices[a]] < vocab.concepts[code.indices[b]];
  });
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
    rep.top.emplace_back(vocab.concepts[code.indices[order[i]]], code.weights[order[i]]);
  }
  rep.reconstruction_cosine = cosine(reconstruct(code, vocab), original_z);
  return rep;
}

nlohmann::json to_json(const ConceptReport& rep) {
  nlohmann::json top = nlohmann::json::array();
  for (const auto& [concept_name, prominence] : rep.top) {
    top.push_back({{"concept", concept_name}, {"prominence", prominence}});
  }
  nlohmann::json j = {{"embedding_id", rep.embedding_id}, {"top", top}, {"l0", rep.l0},
                      {"reconstruction_cosine", rep.reconstruction_cosine}};
  if (rep.empty()) j["empty"] = true;
  return j;
}

ClassProfile class_profile(const std::vector<SparseCodeRecord>& codes, const std::string& label, std::size_t c) {
  if (codes.empty()) throw ValidationError("class profile needs at least one code");
  ClassProfile p{label, codes.size(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c))};
  for (const auto& code : codes) {
    if (code.vocabulary_id != codes.front().vocabulary_id) {
      throw ValidationError("class profile over mixed vocabularies");
    }
    code.validate(c);
    for (std::size_t i = 0; i < code.indices.size(); ++i) p.mean_prominence[code.indices[i]] += code.weights[i];
  }
  p.mean_prominence /= static_cast<double>(codes.size());
  return p;
}

std::vector<ClassProfile> class_profiles(const std::vector<SparseCodeRecord>& codes, const DatasetManifest& manifest,
                                         std::size_t c) {
  std::map<std::string, std::vector<SparseCodeRecord>> grouped;
  for (const auto& code : codes) {
    const ManifestEntry* e = manifest.find(code.embedding_id);
    if (!e) continue;
    for (const auto& label : e->labels) grouped[label].push_back(code);
  }
  std::vector<ClassProfile> out;
  for (const auto& [label, members] : grouped) out.push_back(class_profile(members, label, c));
  return out;
}

void write_class_profile_csv(const ClassProfile& profile, const ConceptVocabulary& vocab,
                             const std::filesystem::path& file) {
  if (static_cast<std::size_t>(profile.mean_prominence.size()) != vocab.size()) {
    throw ValidationError("class profile length does not match vocabulary");
  }
  std::vector<std::size_t> order(vocab.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double pa = profile.mean_prominence[static_cast<Eigen::Index>(a)];
    const double pb = profile.mean_prominence[static_cast<Eigen::Index>(b)];
    if (pa != pb) return pa > pb;
    return vocab.concepts[a] < vocab.concepts[b];
  });
  std::string text = "concept,mean_prominence\n";
  char buf[64];
  for (std::size_t j : order) {
    std::snprintf(buf, sizeof buf, "%.17g", profile.mean_prominence[static_cast<Eigen::Index>(j)]);
    const std::string& name = vocab.concepts[j];
    if (name.find_first_of(",\"") != std::string::npos) {
      std::string quoted = "\"";
      for (char ch : name) {
        if (ch == '"') quoted += '"';
        quoted += ch;
      }
      text += quoted + "\"," + buf + "\n";
    } else {
      text += name + "," + buf + "\n";
    }
  }
  write_text_file(file, text);
}

}  // namespace concept_lens
