#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include <json.hpp>

#include "spncf/data.hpp"
#include "spncf/neural.hpp"
#include "spncf/structlearn.hpp"

namespace spncf::vae {

// Encoder emits [mu | logvar] (width 2*latent_dim), decoder emits per-pixel
// Bernoulli means, classifier emits logits over classes. All helper passes
// here are Eval mode, hence deterministic.
struct VaeModel {
  neural::DenseNetSpec enc_spec, dec_spec, clf_spec;
  neural::DenseNetParams enc, dec, clf;
  int latent_dim = 0;
  int input_height = 0;
  int input_width = 0;
  int num_classes = 0;

  int input_dim() const { return input_height * input_width; }

  void encode(const Eigen::MatrixXd& x, Eigen::MatrixXd& mu,
              Eigen::MatrixXd& logvar) const;
  Eigen::MatrixXd decode(const Eigen::MatrixXd& z) const;
  Eigen::MatrixXd classify_logits(const Eigen::MatrixXd& z) const;
  Eigen::MatrixXd classify_log_softmax(const Eigen::MatrixXd& z) const;
  int argmax_class(const Eigen::VectorXd& z) const;  // ties -> smaller index
};

struct TrainConfig {
  double beta0 = 1.0;
  double beta1 = 0.01;
  double beta2 = 1.0;
  double learning_rate = 0.001;
  int epochs = 100;
  int batch_size = 50;
  std::uint64_t seed = 0;
  int latent_dim = 62;
  std::vector<int> enc_hidden = {128};
  std::vector<int> dec_hidden = {128};
  std::vector<int> clf_hidden = {32};
  double noise_sigma = 0.2;  // hidden-activation noise during training
};

// 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar) against the standard normal.
double kld_diagonal_gaussian(const Eigen::VectorXd& mu,
                             const Eigen::VectorXd& logvar);

struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;  // mean Bernoulli NLL per pixel and instance
  double kld = 0.0;    // mean per-instance KLD
  double clf = 0.0;    // mean cross-entropy
};

struct LossGrads {
  LossBreakdown value;
  neural::Gradients enc, dec, clf;
};

// One reparameterized z per instance; rng drives hidden noise and epsilon in
// a fixed order, so a reseeded rng freezes the stochastic loss exactly.
LossGrads loss_and_grads(const VaeModel& model, const Eigen::MatrixXd& x,
                         const std::vector<int>& y, const TrainConfig& config,
                         Rng& rng);
LossBreakdown loss(const VaeModel& model, const Eigen::MatrixXd& x,
                   const std::vector<int>& y, const TrainConfig& config,
                   Rng& rng);

struct EpochStats {
  double mae = 0.0;
  double mse = 0.0;
  double kld = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  VaeModel model;
  std::vector<EpochStats> history;  // validation stats, one entry per epoch
};

// Seeded Adam training on the weighted three-term loss; validation metrics
// are computed noise-free on posterior means after every epoch.
TrainResult train(const data::LabeledDataset& train_set,
                  const data::LabeledDataset& val_set,
                  const TrainConfig& config);

// Per instance: the posterior mean once, then samples_per_instance-1
// reparameterized draws. Row count = R * n.
structlearn::LatentCsv export_latents(const VaeModel& model,
                                      const data::LabeledDataset& dataset,
                                      int samples_per_instance,
                                      std::uint64_t seed);

nlohmann::json model_to_json(const VaeModel& model);
VaeModel model_from_json(const nlohmann::json& j);

}  // namespace spncf::vae
