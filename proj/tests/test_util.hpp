#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "concept_lens/random.hpp"
#include "concept_lens/store.hpp"

namespace testutil {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("concept_lens_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Eigen::VectorXd random_unit(concept_lens::Rng& rng, Eigen::Index d) {
  Eigen::VectorXd v(d);
  do {
    for (Eigen::Index k = 0; k < d; ++k) v[k] = concept_lens::standard_normal(rng);
  } while (v.norm() < 1e-6);
  return v.normalized();
}

inline Eigen::MatrixXd random_dictionary(concept_lens::Rng& rng, Eigen::Index d, Eigen::Index c) {
  Eigen::MatrixXd C(d, c);
  for (Eigen::Index j = 0; j < c; ++j) C.col(j) = random_unit(rng, d);
  return C;
}

// Embedding set whose rows are the columns of C, ids prefix0, prefix1, ...
inline concept_lens::EmbeddingSet set_from_columns(const Eigen::MatrixXd& C, const std::string& prefix,
                                                   bool normalized = true) {
  std::vector<std::string> ids;
  std::vector<float> data;
  for (Eigen::Index j = 0; j < C.cols(); ++j) {
    ids.push_back(prefix + std::to_string(j));
    for (Eigen::Index k = 0; k < C.rows(); ++k) data.push_back(static_cast<float>(C(k, j)));
  }
  return concept_lens::EmbeddingSet(std::move(ids), static_cast<std::size_t>(C.rows()), std::move(data), normalized);
}

}  // namespace testutil
