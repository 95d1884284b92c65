#include "concept_lens/projection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "concept_lens/errors.hpp"
#include "concept_lens/log.hpp"
#include "concept_lens/random.hpp"

namespace concept_lens {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ValidationError("learning_rate must be >= 0");
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) throw ValidationError("init_scale must be >= 0");
}

void ProjectionMatrix::validate() const {
  if (dim == 0) throw ValidationError("projection dimension must be >= 1");
  if (weights.rows() != static_cast<Eigen::Index>(dim) || weights.cols() != static_cast<Eigen::Index>(dim)) {
    throw ValidationError("projection matrix must be dim x dim");
  }
  if (!weights.allFinite()) throw ValidationError("projection matrix has non-finite entries");
}

ProjectionMatrix init_projection(std::size_t dim, const TrainConfig& cfg) {
  if (dim == 0) throw ValidationError("projection dimension must be >= 1");
  cfg.validate();
  Rng rng(cfg.seed);
  const auto d = static_cast<Eigen::Index>(dim);
  ProjectionMatrix H{dim, Eigen::MatrixXd(d, d), {}, cfg.seed};
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) H.weights(i, j) = uniform_real(rng, -cfg.init_scale, cfg.init_scale);
  }
  if (cfg.identity_init) H.weights += Eigen::MatrixXd::Identity(d, d);
  return H;
}

namespace {

void check_batch(const Eigen::MatrixXd& H, const Eigen::MatrixXd& audio, const Eigen::MatrixXd& targets) {
  if (H.rows() != H.cols()) throw ValidationError("projection must be square");
  if (audio.cols() != H.cols() || targets.cols() != H.rows()) throw ValidationError("dimension mismatch in batch");
  if (audio.rows() != targets.rows()) throw ValidationError("audio and target batches are not aligned");
  if (audio.rows() == 0) throw ValidationError("empty batch");
}

LossValue loss_impl(const Eigen::MatrixXd& H, const Eigen::MatrixXd& audio, const Eigen::MatrixXd& targets,
                    Eigen::MatrixXd* gradient) {
  check_batch(H, audio, targets);
  if (gradient) *gradient = Eigen::MatrixXd::Zero(H.rows(), H.cols());
  LossValue out;
  double total = 0.0;
  std::size_t counted = 0;
  for (Eigen::Index s = 0; s < audio.rows(); ++s) {
    const Eigen::VectorXd z = audio.row(s).transpose();
    const Eigen::VectorXd u = H * z;
    const double un = u.norm();
    const double tn = targets.row(s).norm();
    if (un == 0.0 || tn == 0.0) {
      ++out.skipped;
      continue;
    }
    const Eigen::VectorXd t = targets.row(s).transpose() / tn;
    const double cos = u.dot(t) / un;
    total += 1.0 - cos;
    ++counted;
    if (gradient) {
      // d(1 - cos)/du = -(t / |u| - cos * u / |u|^2)
      const Eigen::VectorXd dl_du = -(t / un - (cos / (un * un)) * u);
      gradient->noalias() += dl_du * z.transpose();
    }
  }
  if (out.skipped > 0) log::warn("projection_zero_vector", {{"skipped", out.skipped}});
  if (counted == 0) throw Error("projection loss undefined: every sample maps to the zero vector");
  out.value = total / static_cast<double>(counted);
  if (gradient) *gradient /= static_cast<double>(counted);
  return out;
}

}  // namespace

LossValue projection_loss(const Eigen::MatrixXd& H, const Eigen::MatrixXd& audio, const Eigen::MatrixXd& targets) {
  return loss_impl(H, audio, targets, nullptr);
}

LossValue projection_loss_gradient(const Eigen::MatrixXd& H, const Eigen::MatrixXd& audio,
                                   const Eigen::MatrixXd& targets, Eigen::MatrixXd& gradient) {
  return loss_impl(H, audio, targets, &gradient);
}

TrainResult train_projection(const Eigen::MatrixXd& audio, const Eigen::MatrixXd& targets, const TrainConfig& cfg) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(audio.rows());
  ProjectionMatrix H = init_projection(static_cast<std::size_t>(audio.cols()), cfg);
  check_batch(H.weights, audio, targets);

  TrainResult result;
  result.best_loss = projection_loss(H.weights, audio, targets).value;
  result.loss_history.push_back(result.best_loss);
  result.projection = H;

  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n);
  int since_improvement = 0;
  Eigen::MatrixXd gradient;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(n, start + batch);
      Eigen::MatrixXd a(static_cast<Eigen::Index>(stop - start), audio.cols());
      Eigen::MatrixXd t(static_cast<Eigen::Index>(stop - start), targets.cols());
      for (std::size_t k = start; k < stop; ++k) {
        a.row(static_cast<Eigen::Index>(k - start)) = audio.row(static_cast<Eigen::Index>(order[k]));
        t.row(static_cast<Eigen::Index>(k - start)) = targets.row(static_cast<Eigen::Index>(order[k]));
      }
      const LossValue lv = projection_loss_gradient(H.weights, a, t, gradient);
      result.skipped_samples += lv.skipped;
      H.weights.noalias() -= cfg.learning_rate * gradient;
    }
    const double dev_loss = projection_loss(H.weights, audio, targets).value;
    if (!std::isfinite(dev_loss) || !H.weights.allFinite()) {
      throw Error("projection training diverged at epoch " + std::to_string(epoch) +
                  " (non-finite loss); lower the learning rate");
    }
    result.loss_history.push_back(dev_loss);
    result.epochs_run = epoch;
    if (dev_loss < result.best_loss) {
      result.best_loss = dev_loss;
      result.projection = H;
      since_improvement = 0;
    } else if (cfg.early_stop_patience > 0 && ++since_improvement >= cfg.early_stop_patience) {
      break;
    }
  }
  return result;
}

TrainResult train_projection(const EmbeddingSet& embeddings, const DatasetManifest& manifest,
                             const PromptBank& prompts, const TrainConfig& cfg, const std::string& split,
                             const std::string& dataset_id) {
  prompts.validate();
  const auto entries = manifest.in_split(split);
  if (entries.empty()) throw ValidationError("no training samples in split '" + split + "'");
  const auto d = static_cast<Eigen::Index>(embeddings.dim());
  if (prompts.prompt_embeddings.dim() != embeddings.dim()) {
    throw ValidationError("prompt and audio embedding dimensions differ");
  }
  Eigen::MatrixXd audio(static_cast<Eigen::Index>(entries.size()), d);
  Eigen::MatrixXd targets(static_cast<Eigen::Index>(entries.size()), d);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const ManifestEntry& e = *entries[i];
    const auto row = embeddings.index_of(e.id);
    if (!row) throw ValidationError("manifest id has no embedding: " + e.id);
    if (e.labels.empty()) throw ValidationError("training sample without label: " + e.id);
    const auto label = std::find(prompts.class_labels.begin(), prompts.class_labels.end(), e.labels.front());
    if (label == prompts.class_labels.end()) throw ValidationError("label not in prompt bank: " + e.labels.front());
    audio.row(static_cast<Eigen::Index>(i)) = embeddings.row_vector(*row).transpose();
    targets.row(static_cast<Eigen::Index>(i)) =
        prompts.prompt_embeddings.row_vector(static_cast<std::size_t>(label - prompts.class_labels.begin())).transpose();
  }
  TrainResult result = train_projection(audio, targets, cfg);
  result.projection.trained_on = dataset_id;
  return result;
}

SparseCodeRecord project_then_decompose(const ProjectionMatrix& H, const Eigen::VectorXd& z, std::string embedding_id,
                                        const Decomposer& decomposer) {
  H.validate();
  if (z.size() != H.weights.cols()) throw ValidationError("dimension mismatch between projection and embedding");
  const Eigen::VectorXd projected = H.weights * z;
  if (projected.norm() == 0.0) throw ValidationError("projection maps embedding to the zero vector: " + embedding_id);
  return decomposer.decompose(projected, std::move(embedding_id));
}

void write_projection(const ProjectionMatrix& H, const fs::path& dir) {
  H.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  std::vector<float> values;
  values.reserve(H.dim * H.dim);
  for (Eigen::Index i = 0; i < H.weights.rows(); ++i) {
    for (Eigen::Index j = 0; j < H.weights.cols(); ++j) values.push_back(static_cast<float>(H.weights(i, j)));
  }
  write_f32_blob(dir / "data.f32", values);
  const nlohmann::json meta = {
      {"format", kProjectionFormat}, {"dim", H.dim}, {"seed", H.seed}, {"trained_on", H.trained_on}};
  write_text_file(dir / "meta.json", meta.dump(1) + "\n");
}

ProjectionMatrix read_projection(const fs::path& dir) {
  const nlohmann::json meta = read_json_file(dir / "meta.json");
  ProjectionMatrix H;
  try {
    if (meta.at("format").get<std::string>() != kProjectionFormat) {
      throw FormatError("unsupported projection format in " + dir.string());
    }
    H.dim = meta.at("dim").get<std::size_t>();
    H.seed = meta.at("seed").get<std::uint64_t>();
    H.trained_on = meta.value("trained_on", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed projection meta in " + dir.string() + ": " + e.what());
  }
  const auto values = read_f32_blob(dir / "data.f32");
  if (values.size() != H.dim * H.dim) throw FormatError("size mismatch in projection blob " + dir.string());
  const auto d = static_cast<Eigen::Index>(H.dim);
  H.weights.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) H.weights(i, j) = values[static_cast<std::size_t>(i * d + j)];
  }
  H.validate();
  return H;
}

}  // namespace concept_lens
