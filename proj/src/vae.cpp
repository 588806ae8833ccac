#include "spncf/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spncf::vae {

using neural::Activation;
using neural::Mode;
using nlohmann::json;

void VaeModel::encode(const Eigen::MatrixXd& x, Eigen::MatrixXd& mu,
                      Eigen::MatrixXd& logvar) const {
  const auto trace = neural::forward(enc_spec, enc, x, Mode::Eval);
  mu = trace.output().leftCols(latent_dim);
  logvar = trace.output().rightCols(latent_dim);
}

Eigen::MatrixXd VaeModel::decode(const Eigen::MatrixXd& z) const {
  return neural::forward(dec_spec, dec, z, Mode::Eval).output();
}

Eigen::MatrixXd VaeModel::classify_logits(const Eigen::MatrixXd& z) const {
  return neural::forward(clf_spec, clf, z, Mode::Eval).output();
}

Eigen::MatrixXd VaeModel::classify_log_softmax(const Eigen::MatrixXd& z) const {
  Eigen::MatrixXd ls = classify_logits(z);
  for (int r = 0; r < ls.rows(); ++r) {
    const double mx = ls.row(r).maxCoeff();
    const double lse = mx + std::log((ls.row(r).array() - mx).exp().sum());
    ls.row(r).array() -= lse;
  }
  return ls;
}

int VaeModel::argmax_class(const Eigen::VectorXd& z) const {
  const Eigen::MatrixXd logits = classify_logits(z.transpose());
  int best = 0;
  for (int k = 1; k < logits.cols(); ++k)
    if (logits(0, k) > logits(0, best)) best = k;
  return best;
}

double kld_diagonal_gaussian(const Eigen::VectorXd& mu,
                             const Eigen::VectorXd& logvar) {
  if (mu.size() != logvar.size())
    throw InputError("kld: mu and logvar lengths differ");
  if (!mu.allFinite() || !logvar.allFinite())
    throw InputError("kld: non-finite input");
  return 0.5 * (logvar.array().exp() + mu.array().square() - 1.0 -
                logvar.array())
                   .sum();
}

namespace {

constexpr double kBernoulliClamp = 1e-12;

struct ForwardState {
  neural::Trace enc, dec, clf;
  Eigen::MatrixXd mu, logvar, eps, z, probs, log_softmax;
};

// Shared by loss value and gradients so the rng draw order is identical.
ForwardState run_forward(const VaeModel& m, const Eigen::MatrixXd& x,
                         Mode mode, Rng& rng) {
  ForwardState s;
  s.enc = neural::forward(m.enc_spec, m.enc, x, mode, &rng);
  s.mu = s.enc.output().leftCols(m.latent_dim);
  s.logvar = s.enc.output().rightCols(m.latent_dim);
  s.eps.resize(x.rows(), m.latent_dim);
  for (int r = 0; r < s.eps.rows(); ++r)
    for (int c = 0; c < s.eps.cols(); ++c) s.eps(r, c) = rng.normal();
  s.z = s.mu + ((0.5 * s.logvar.array()).exp() * s.eps.array()).matrix();
  s.dec = neural::forward(m.dec_spec, m.dec, s.z, mode, &rng);
  s.probs = s.dec.output().array().max(kBernoulliClamp).min(1.0 -
                                                            kBernoulliClamp);
  s.clf = neural::forward(m.clf_spec, m.clf, s.z, mode, &rng);
  s.log_softmax = s.clf.output();
  for (int r = 0; r < s.log_softmax.rows(); ++r) {
    const double mx = s.log_softmax.row(r).maxCoeff();
    const double lse =
        mx + std::log((s.log_softmax.row(r).array() - mx).exp().sum());
    s.log_softmax.row(r).array() -= lse;
  }
  return s;
}

}  // namespace

LossGrads loss_and_grads(const VaeModel& model, const Eigen::MatrixXd& x,
                         const std::vector<int>& y, const TrainConfig& config,
                         Rng& rng) {
  if (x.rows() == 0) throw InputError("loss: empty batch");
  if (static_cast<int>(y.size()) != x.rows())
    throw InputError("loss: label count does not match batch");
  if ((x.array() < 0.0).any() || (x.array() > 1.0).any())
    throw InputError("loss: pixel values outside [0,1]");
  if (!(config.beta0 > 0.0 || config.beta1 > 0.0 || config.beta2 > 0.0))
    throw InputError("loss: at least one beta must be positive");
  for (int label : y)
    if (label < 0 || label >= model.num_classes)
      throw InputError("loss: label outside model class range");

  const int B = static_cast<int>(x.rows());
  const int P = static_cast<int>(x.cols());
  auto s = run_forward(model, x, Mode::Train, rng);

  LossGrads out;
  // recon: mean Bernoulli NLL over pixels and instances
  out.value.recon =
      -(x.array() * s.probs.array().log() +
        (1.0 - x.array()) * (1.0 - s.probs.array()).log())
           .sum() /
      (static_cast<double>(B) * P);
  for (int r = 0; r < B; ++r)
    out.value.kld += kld_diagonal_gaussian(s.mu.row(r).transpose(),
                                           s.logvar.row(r).transpose());
  out.value.kld /= B;
  for (int r = 0; r < B; ++r) out.value.clf -= s.log_softmax(r, y[r]);
  out.value.clf /= B;
  out.value.total = config.beta0 * out.value.recon +
                    config.beta1 * out.value.kld + config.beta2 * out.value.clf;

  // decoder head: d(recon)/d(prob)
  const Eigen::MatrixXd dprob =
      config.beta0 *
      ((s.probs.array() - x.array()) /
       (s.probs.array() * (1.0 - s.probs.array())) /
       (static_cast<double>(B) * P))
          .matrix();
  out.dec = neural::backward(model.dec_spec, model.dec, s.dec, dprob);

  // classifier head: d(clf)/d(logits) = softmax - onehot, scaled
  Eigen::MatrixXd dlogits = s.log_softmax.array().exp().matrix();
  for (int r = 0; r < B; ++r) dlogits(r, y[r]) -= 1.0;
  dlogits *= config.beta2 / B;
  out.clf = neural::backward(model.clf_spec, model.clf, s.clf, dlogits);

  // into the latent: z = mu + exp(logvar/2) * eps
  const Eigen::MatrixXd dz = out.dec.dinput + out.clf.dinput;
  Eigen::MatrixXd dmu = dz + (config.beta1 / B) * s.mu;
  Eigen::MatrixXd dlogvar =
      (dz.array() * s.eps.array() * (0.5 * s.logvar.array()).exp() * 0.5 +
       (config.beta1 / B) * 0.5 * (s.logvar.array().exp() - 1.0))
          .matrix();
  Eigen::MatrixXd denc(B, 2 * model.latent_dim);
  denc << dmu, dlogvar;
  out.enc = neural::backward(model.enc_spec, model.enc, s.enc, denc);
  return out;
}

LossBreakdown loss(const VaeModel& model, const Eigen::MatrixXd& x,
                   const std::vector<int>& y, const TrainConfig& config,
                   Rng& rng) {
  return loss_and_grads(model, x, y, config, rng).value;
}

namespace {

VaeModel build_model(const TrainConfig& cfg, int input_dim, int height,
                     int width, int num_classes) {
  VaeModel m;
  m.latent_dim = cfg.latent_dim;
  m.input_height = height;
  m.input_width = width;
  m.num_classes = num_classes;

  m.enc_spec.input_dim = input_dim;
  for (int w : cfg.enc_hidden) {
    m.enc_spec.widths.push_back(w);
    m.enc_spec.activations.push_back(Activation::ReLU);
  }
  m.enc_spec.widths.push_back(2 * cfg.latent_dim);
  m.enc_spec.activations.push_back(Activation::Identity);
  m.enc_spec.gaussian_noise_sigma = cfg.noise_sigma;

  m.dec_spec.input_dim = cfg.latent_dim;
  for (int w : cfg.dec_hidden) {
    m.dec_spec.widths.push_back(w);
    m.dec_spec.activations.push_back(Activation::ReLU);
  }
  m.dec_spec.widths.push_back(input_dim);
  m.dec_spec.activations.push_back(Activation::Sigmoid);
  m.dec_spec.gaussian_noise_sigma = cfg.noise_sigma;

  m.clf_spec.input_dim = cfg.latent_dim;
  for (int w : cfg.clf_hidden) {
    m.clf_spec.widths.push_back(w);
    m.clf_spec.activations.push_back(Activation::ReLU);
  }
  m.clf_spec.widths.push_back(num_classes);
  m.clf_spec.activations.push_back(Activation::Identity);
  m.clf_spec.gaussian_noise_sigma = cfg.noise_sigma;

  m.enc = neural::init_params(m.enc_spec, splitmix64(cfg.seed ^ 0x656e63ULL));
  m.dec = neural::init_params(m.dec_spec, splitmix64(cfg.seed ^ 0x646563ULL));
  m.clf = neural::init_params(m.clf_spec, splitmix64(cfg.seed ^ 0x636c66ULL));
  return m;
}

EpochStats validation_stats(const VaeModel& m,
                            const data::LabeledDataset& val) {
  EpochStats s;
  Eigen::MatrixXd mu, logvar;
  m.encode(val.instances, mu, logvar);
  const Eigen::MatrixXd recon = m.decode(mu);
  const Eigen::ArrayXXd diff = recon.array() - val.instances.array();
  s.mae = diff.abs().mean();
  s.mse = diff.square().mean();
  for (int r = 0; r < mu.rows(); ++r)
    s.kld += kld_diagonal_gaussian(mu.row(r).transpose(),
                                   logvar.row(r).transpose());
  s.kld /= mu.rows();
  const Eigen::MatrixXd logits = m.classify_logits(mu);
  int correct = 0;
  for (int r = 0; r < logits.rows(); ++r) {
    int best = 0;
    for (int k = 1; k < logits.cols(); ++k)
      if (logits(r, k) > logits(r, best)) best = k;
    if (best == val.labels[r]) ++correct;
  }
  s.accuracy = static_cast<double>(correct) / logits.rows();
  return s;
}

}  // namespace

TrainResult train(const data::LabeledDataset& train_set,
                  const data::LabeledDataset& val_set,
                  const TrainConfig& config) {
  if (train_set.size() == 0) throw InputError("train: empty training set");
  if (val_set.size() == 0) throw InputError("train: empty validation set");
  if (config.latent_dim <= 0 || config.batch_size <= 0 || config.epochs < 0)
    throw InputError("train: bad latent_dim/batch_size/epochs");
  if (!(config.beta0 > 0.0 || config.beta1 > 0.0 || config.beta2 > 0.0))
    throw InputError("train: at least one beta must be positive");
  const int num_classes =
      std::max(train_set.num_classes(), val_set.num_classes());
  if (config.beta2 > 0.0 && num_classes < 2)
    throw InputError("train: classifier term needs at least 2 classes");

  TrainResult result;
  result.model = build_model(config, train_set.pixels(), train_set.height,
                             train_set.width, std::max(num_classes, 1));

  auto adam_enc = neural::AdamState::init(result.model.enc, config.learning_rate);
  auto adam_dec = neural::AdamState::init(result.model.dec, config.learning_rate);
  auto adam_clf = neural::AdamState::init(result.model.clf, config.learning_rate);

  Rng rng(splitmix64(config.seed ^ 0x747261696eULL));
  std::vector<int> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (int start = 0; start < train_set.size(); start += config.batch_size) {
      const int B = std::min(config.batch_size, train_set.size() - start);
      Eigen::MatrixXd x(B, train_set.pixels());
      std::vector<int> y(B);
      for (int i = 0; i < B; ++i) {
        x.row(i) = train_set.instances.row(order[start + i]);
        y[i] = train_set.labels[order[start + i]];
      }
      auto lg = loss_and_grads(result.model, x, y, config, rng);
      if (!std::isfinite(lg.value.total))
        throw TrainError("loss diverged at epoch " + std::to_string(epoch));
      neural::adam_step(adam_enc, result.model.enc, lg.enc);
      neural::adam_step(adam_dec, result.model.dec, lg.dec);
      neural::adam_step(adam_clf, result.model.clf, lg.clf);
    }
    result.history.push_back(validation_stats(result.model, val_set));
  }
  return result;
}

structlearn::LatentCsv export_latents(const VaeModel& model,
                                      const data::LabeledDataset& dataset,
                                      int samples_per_instance,
                                      std::uint64_t seed) {
  if (samples_per_instance < 1)
    throw InputError("export_latents: samples_per_instance must be >= 1");
  const int n = dataset.size();
  const int R = samples_per_instance;
  Eigen::MatrixXd mu, logvar;
  model.encode(dataset.instances, mu, logvar);

  structlearn::LatentCsv out;
  out.table.rows.resize(static_cast<long>(n) * R, model.latent_dim);
  out.table.column_ids.resize(model.latent_dim);
  std::iota(out.table.column_ids.begin(), out.table.column_ids.end(), 0);

  Rng rng(seed);
  long row = 0;
  for (int i = 0; i < n; ++i) {
    out.table.rows.row(row++) = mu.row(i);
    out.table.labels.push_back(dataset.labels[i]);
    out.group_ids.push_back(dataset.group_ids[i]);
    for (int r = 1; r < R; ++r) {
      for (int j = 0; j < model.latent_dim; ++j)
        out.table.rows(row, j) =
            mu(i, j) + std::exp(0.5 * logvar(i, j)) * rng.normal();
      ++row;
      out.table.labels.push_back(dataset.labels[i]);
      out.group_ids.push_back(dataset.group_ids[i]);
    }
  }
  return out;
}

json model_to_json(const VaeModel& model) {
  return {{"version", 1},
          {"latent_dim", model.latent_dim},
          {"input_height", model.input_height},
          {"input_width", model.input_width},
          {"num_classes", model.num_classes},
          {"encoder", neural::net_to_json(model.enc_spec, model.enc)},
          {"decoder", neural::net_to_json(model.dec_spec, model.dec)},
          {"classifier", neural::net_to_json(model.clf_spec, model.clf)}};
}

VaeModel model_from_json(const json& j) {
  if (j.value("version", 0) != 1) throw IoError("unsupported model version");
  VaeModel m;
  m.latent_dim = j.at("latent_dim").get<int>();
  m.input_height = j.at("input_height").get<int>();
  m.input_width = j.at("input_width").get<int>();
  m.num_classes = j.at("num_classes").get<int>();
  neural::net_from_json(j.at("encoder"), m.enc_spec, m.enc);
  neural::net_from_json(j.at("decoder"), m.dec_spec, m.dec);
  neural::net_from_json(j.at("classifier"), m.clf_spec, m.clf);
  if (m.enc_spec.output_dim() != 2 * m.latent_dim ||
      m.clf_spec.input_dim != m.latent_dim ||
      m.dec_spec.output_dim() != m.input_height * m.input_width)
    throw IoError("model json nets are inconsistent with latent/input shape");
  return m;
}

}  // namespace spncf::vae
