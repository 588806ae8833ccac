#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "spncf/circuit.hpp"
#include "spncf/vae.hpp"

namespace spncf::counterfactual {

enum class Backend { Spn, Mlp };

struct CfConfig {
  int target_class = 1;
  double beta = 0.0;   // proximity weight
  double gamma = 0.0;  // likelihood-preservation weight; must be 0 for MLP
  int replicates = 1;
  double step_size = 0.05;
  int max_steps = 1000;
  Backend backend = Backend::Spn;
  std::uint64_t seed = 0;
  bool early_stop = false;  // stop a replicate once the prediction flips
};

struct Objective {
  double value = 0.0;
  Eigen::VectorXd grad;
};

// log p(y_cf|z') - beta*||z'-z||^2 - gamma*|log p(z') - log p(z)|, with the
// subgradient of |.| taken as 0 at equality. The SPN backend needs circuit;
// the MLP backend uses the model's classifier head and allows no gamma.
Objective cf_objective(const Eigen::VectorXd& z_prime,
                       const Eigen::VectorXd& z_origin, const CfConfig& config,
                       const vae::VaeModel& model,
                       const circuit::Circuit* circuit);

struct ReplicateResult {
  Eigen::VectorXd z0;    // reparameterized sample this replicate started from
  Eigen::VectorXd z_cf;  // final latent counterfactual
  std::optional<int> switch_epoch;  // first step whose argmax == target
  std::vector<double> objective_trace;
};

struct CfResult {
  CfConfig config;
  std::vector<ReplicateResult> replicates;
  Eigen::VectorXd x_tilde;  // mean decoded original samples
  Eigen::VectorXd x_cf;     // mean decoded counterfactuals
  Eigen::VectorXd diff;     // x_cf - x_tilde
};

// Draws R reparameterized samples from Enc(x), ascends cf_objective with a
// fixed step size from each, and decodes the means. Replicate r's rng seed
// is seed XOR r, so results are a prefix-stable function of R.
CfResult generate(const Eigen::VectorXd& x, const vae::VaeModel& model,
                  const CfConfig& config, const circuit::Circuit* circuit);

// Signed map x_cf - x_tilde (shape-checked).
Eigen::VectorXd difference_map(const Eigen::VectorXd& x_cf_mean,
                               const Eigen::VectorXd& x_tilde_mean);

// Diverging rendering: positive -> red, negative -> blue, zero -> white,
// symmetric scale about 0. Written as binary PPM.
void render_difference_map(const Eigen::VectorXd& map, int width, int height,
                           const std::filesystem::path& path);

nlohmann::json cf_result_to_json(const CfResult& result);
CfResult cf_result_from_json(const nlohmann::json& j);

}  // namespace spncf::counterfactual
