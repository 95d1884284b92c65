#pragma once

// Supervised d x d linear projection H that pulls audio embeddings toward the
// prompt embedding of their class, followed by decomposition of H z.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "concept_lens/decomposer.hpp"
#include "concept_lens/evaluator.hpp"
#include "concept_lens/store.hpp"

namespace concept_lens {

inline constexpr const char* kProjectionFormat = "cproj-1";

struct TrainConfig {
  double learning_rate = 0.5;
  int max_epochs = 200;
  int batch_size = 32;
  // Stop after this many epochs without improvement; <= 0 disables.
  int early_stop_patience = 20;
  std::uint64_t seed = 0;
  double init_scale = 0.01;
  // Start from identity plus uniform noise instead of pure uniform noise.
  bool identity_init = false;

  void validate() const;
};

struct ProjectionMatrix {
  std::size_t dim = 0;
  Eigen::MatrixXd weights;
  std::string trained_on;
  std::uint64_t seed = 0;

  void validate() const;
};

// Entries uniform in [-init_scale, init_scale] (plus identity when
// cfg.identity_init), drawn from cfg.seed.
ProjectionMatrix init_projection(std::size_t dim, const TrainConfig& cfg);

struct LossValue {
  double value = 0.0;
  std::size_t skipped = 0;  // samples with H z = 0
};

// Mean over samples (rows) of 1 - cos(H z, t).
LossValue projection_loss(const Eigen::MatrixXd& H, const Eigen::MatrixXd& audio, const Eigen::MatrixXd& targets);

// Loss and its gradient with respect to H.
LossValue projection_loss_gradient(const Eigen::MatrixXd& H, const Eigen::MatrixXd& audio,
                                   const Eigen::MatrixXd& targets, Eigen::MatrixXd& gradient);

struct TrainResult {
  ProjectionMatrix projection;  // best-loss iterate
  std::vector<double> loss_history;  // dev loss before training, then after each epoch
  int epochs_run = 0;
  double best_loss = 0.0;
  std::size_t skipped_samples = 0;
};

// Mini-batch gradient descent over rows of `audio` with aligned `targets`.
TrainResult train_projection(const Eigen::MatrixXd& audio, const Eigen::MatrixXd& targets, const TrainConfig& cfg);

// Targets are the prompt embeddings of each dev sample's first label.
TrainResult train_projection(const EmbeddingSet& embeddings, const DatasetManifest& manifest,
                             const PromptBank& prompts, const TrainConfig& cfg, const std::string& split,
                             const std::string& dataset_id);

// Normalizes H z and decomposes it.
SparseCodeRecord project_then_decompose(const ProjectionMatrix& H, const Eigen::VectorXd& z, std::string embedding_id,
                                        const Decomposer& decomposer);

// meta.json {"format": "cproj-1", "dim", "seed", "trained_on"} + data.f32 (d*d, row-major).
void write_projection(const ProjectionMatrix& H, const std::filesystem::path& dir);
ProjectionMatrix read_projection(const std::filesystem::path& dir);

}  // namespace concept_lens
