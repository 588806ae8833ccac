#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include <json.hpp>

#include "spncf/common.hpp"

namespace spncf::neural {

enum class Activation { ReLU, Identity, Sigmoid };

// Flat row-major view used at API boundaries; math happens on Eigen
// matrices with one instance per row.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> values;

  std::size_t size() const;
  // Interprets shape as [n, d] (or [d] for a single instance).
  Eigen::MatrixXd as_matrix() const;
  static Tensor from_matrix(const Eigen::MatrixXd& m);
};

struct DenseNetSpec {
  int input_dim = 0;
  std::vector<int> widths;              // output width per layer
  std::vector<Activation> activations;  // one per layer
  double gaussian_noise_sigma = 0.0;    // hidden activations, Train mode only

  int num_layers() const { return static_cast<int>(widths.size()); }
  int output_dim() const { return widths.back(); }
  void check() const;  // throws InputError on malformed specs
};

struct DenseNetParams {
  std::vector<Eigen::MatrixXd> W;  // out x in
  std::vector<Eigen::VectorXd> b;
};

// He-uniform for ReLU layers, Glorot-uniform otherwise; zero biases.
DenseNetParams init_params(const DenseNetSpec& spec, std::uint64_t seed);

enum class Mode { Train, Eval };

// Cached intermediates for the backward pass. Rows are batch instances.
struct Trace {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;   // pre-activation per layer
  std::vector<Eigen::MatrixXd> post;  // post-activation (after noise)

  const Eigen::MatrixXd& output() const { return post.back(); }
};

// Train mode adds zero-mean Gaussian noise (spec.gaussian_noise_sigma) to
// hidden activations and requires rng; Eval is deterministic and noise-free.
Trace forward(const DenseNetSpec& spec, const DenseNetParams& params,
              const Eigen::MatrixXd& input, Mode mode, Rng* rng = nullptr);

struct Gradients {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;
  Eigen::MatrixXd dinput;
};

// Exact reverse-mode gradients of sum_i L_i given dL/doutput.
Gradients backward(const DenseNetSpec& spec, const DenseNetParams& params,
                   const Trace& trace, const Eigen::MatrixXd& output_grad);

struct AdamState {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Eigen::MatrixXd> mW, vW;
  std::vector<Eigen::VectorXd> mb, vb;

  static AdamState init(const DenseNetParams& params, double lr);
};

// Bias-corrected Adam update in place; throws TrainError naming the
// parameter on a non-finite gradient.
void adam_step(AdamState& state, DenseNetParams& params, const Gradients& grads);

// Loss maps the net output to (value, dL/doutput).
using OutputLoss =
    std::function<std::pair<double, Eigen::MatrixXd>(const Eigen::MatrixXd&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  int num_checked = 0;
  bool pass = false;
};

// Compares backward against central finite differences (h=1e-5) on a random
// subset of at least min(num_params, total) parameters, Eval mode.
GradCheckReport grad_check(const DenseNetSpec& spec,
                           const DenseNetParams& params,
                           const Eigen::MatrixXd& input, const OutputLoss& loss,
                           double tolerance, int num_params = 50,
                           std::uint64_t seed = 0);

// Versioned JSON {spec, flat row-major parameter arrays per layer}; loading
// then evaluating reproduces Eval outputs bit-identically.
nlohmann::json net_to_json(const DenseNetSpec& spec,
                           const DenseNetParams& params);
void net_from_json(const nlohmann::json& j, DenseNetSpec& spec,
                   DenseNetParams& params);

}  // namespace spncf::neural
