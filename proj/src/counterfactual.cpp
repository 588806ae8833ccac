#include "spncf/counterfactual.hpp"

#include <algorithm>
#include <cmath>

#include "spncf/image_io.hpp"

namespace spncf::counterfactual {

using nlohmann::json;

namespace {

void check_config(const CfConfig& c, const circuit::Circuit* circuit,
                  const vae::VaeModel& model) {
  if (c.replicates < 1) throw ConfigError("replicates must be >= 1");
  if (c.step_size <= 0.0) throw ConfigError("step_size must be positive");
  if (c.max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (c.beta < 0.0 || c.gamma < 0.0)
    throw ConfigError("beta and gamma must be non-negative");
  if (c.backend == Backend::Mlp && c.gamma != 0.0)
    throw ConfigError("gamma must be 0 for the MLP backend (no density)");
  if (c.backend == Backend::Spn) {
    if (circuit == nullptr)
      throw ConfigError("SPN backend requires a circuit");
    if (circuit->dimension() != model.latent_dim)
      throw ConfigError("circuit dimension does not match the latent space");
    if (c.target_class < 0 || c.target_class >= circuit->num_classes())
      throw ConfigError("target_class outside the circuit's class range");
  } else if (c.target_class < 0 || c.target_class >= model.num_classes) {
    throw ConfigError("target_class outside the classifier's class range");
  }
}

// log p(y|z) and its z-gradient from the classifier head.
double mlp_log_posterior(const vae::VaeModel& model, const Eigen::VectorXd& z,
                         int target, Eigen::VectorXd* grad) {
  const auto trace =
      neural::forward(model.clf_spec, model.clf, z.transpose(),
                      neural::Mode::Eval);
  const Eigen::RowVectorXd logits = trace.output().row(0);
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  if (grad) {
    Eigen::RowVectorXd dlogits = -(logits.array() - lse).exp().matrix();
    dlogits[target] += 1.0;
    *grad = neural::backward(model.clf_spec, model.clf, trace, dlogits)
                .dinput.row(0);
  }
  return logits[target] - lse;
}

double spn_log_posterior(const circuit::Circuit& c, const Eigen::VectorXd& z,
                         int target) {
  const auto post = c.class_posterior(std::span(z.data(), z.size()));
  double lse = post.log_joint[0];
  for (std::size_t k = 1; k < post.log_joint.size(); ++k)
    lse = log_add_exp(lse, post.log_joint[k]);
  return post.log_joint[target] - lse;
}

}  // namespace

Objective cf_objective(const Eigen::VectorXd& z_prime,
                       const Eigen::VectorXd& z_origin, const CfConfig& config,
                       const vae::VaeModel& model,
                       const circuit::Circuit* circuit) {
  if (z_prime.size() != z_origin.size())
    throw InputError("cf_objective: latent dimensions differ");
  check_config(config, circuit, model);

  Objective obj;
  obj.grad = Eigen::VectorXd::Zero(z_prime.size());

  if (config.backend == Backend::Spn) {
    obj.value = spn_log_posterior(*circuit, z_prime, config.target_class);
    const auto g = circuit->grad_z(
        std::span(z_prime.data(), z_prime.size()),
        circuit::GradTarget::log_posterior(config.target_class));
    for (int i = 0; i < obj.grad.size(); ++i) obj.grad[i] += g[i];
  } else {
    Eigen::VectorXd g;
    obj.value = mlp_log_posterior(model, z_prime, config.target_class, &g);
    obj.grad += g;
  }

  const Eigen::VectorXd d = z_prime - z_origin;
  obj.value -= config.beta * d.squaredNorm();
  obj.grad -= 2.0 * config.beta * d;

  if (config.gamma > 0.0) {
    const double lp_prime =
        circuit->log_marginal(std::span(z_prime.data(), z_prime.size()));
    const double lp_origin =
        circuit->log_marginal(std::span(z_origin.data(), z_origin.size()));
    const double delta = lp_prime - lp_origin;
    obj.value -= config.gamma * std::abs(delta);
    if (delta != 0.0) {
      const double sign = delta > 0.0 ? 1.0 : -1.0;
      const auto g = circuit->grad_z(std::span(z_prime.data(), z_prime.size()),
                                     circuit::GradTarget::log_marginal());
      for (int i = 0; i < obj.grad.size(); ++i)
        obj.grad[i] -= config.gamma * sign * g[i];
    }
  }

  if (!std::isfinite(obj.value) || !obj.grad.allFinite())
    throw OptimError("cf_objective produced a non-finite value or gradient");
  return obj;
}

namespace {

int backend_argmax(const CfConfig& config, const vae::VaeModel& model,
                   const circuit::Circuit* circuit, const Eigen::VectorXd& z) {
  if (config.backend == Backend::Spn)
    return circuit->argmax_class(std::span(z.data(), z.size()));
  return model.argmax_class(z);
}

}  // namespace

CfResult generate(const Eigen::VectorXd& x, const vae::VaeModel& model,
                  const CfConfig& config, const circuit::Circuit* circuit) {
  check_config(config, circuit, model);
  if (x.size() != model.input_dim())
    throw InputError("instance size does not match model input");
  if (model.enc.W.empty() || model.dec.W.empty() || model.clf.W.empty())
    throw InputError("generate needs a trained model");

  Eigen::MatrixXd mu, logvar;
  model.encode(x.transpose(), mu, logvar);

  CfResult result;
  result.config = config;
  Eigen::VectorXd x_tilde_sum = Eigen::VectorXd::Zero(model.input_dim());
  Eigen::VectorXd x_cf_sum = Eigen::VectorXd::Zero(model.input_dim());

  for (int r = 0; r < config.replicates; ++r) {
    Rng rng(config.seed ^ static_cast<std::uint64_t>(r));
    ReplicateResult rep;
    rep.z0.resize(model.latent_dim);
    for (int j = 0; j < model.latent_dim; ++j)
      rep.z0[j] = mu(0, j) + std::exp(0.5 * logvar(0, j)) * rng.normal();
    rep.z_cf = rep.z0;

    for (int step = 0; step < config.max_steps; ++step) {
      if (!rep.switch_epoch &&
          backend_argmax(config, model, circuit, rep.z_cf) ==
              config.target_class)
        rep.switch_epoch = step;
      if (config.early_stop && rep.switch_epoch) break;
      Objective obj;
      try {
        obj = cf_objective(rep.z_cf, rep.z0, config, model, circuit);
      } catch (const OptimError& e) {
        throw OptimError(std::string(e.what()) + " at step " +
                         std::to_string(step));
      }
      rep.objective_trace.push_back(obj.value);
      rep.z_cf += config.step_size * obj.grad;
      if (!rep.z_cf.allFinite())
        throw OptimError("latent state became non-finite at step " +
                         std::to_string(step));
    }
    if (!rep.switch_epoch &&
        backend_argmax(config, model, circuit, rep.z_cf) == config.target_class)
      rep.switch_epoch = config.max_steps;

    x_tilde_sum += model.decode(rep.z0.transpose()).row(0);
    x_cf_sum += model.decode(rep.z_cf.transpose()).row(0);
    result.replicates.push_back(std::move(rep));
  }

  result.x_tilde = x_tilde_sum / config.replicates;
  result.x_cf = x_cf_sum / config.replicates;
  result.diff = result.x_cf - result.x_tilde;
  return result;
}

Eigen::VectorXd difference_map(const Eigen::VectorXd& x_cf_mean,
                               const Eigen::VectorXd& x_tilde_mean) {
  if (x_cf_mean.size() != x_tilde_mean.size())
    throw InputError("difference_map: shapes differ");
  return x_cf_mean - x_tilde_mean;
}

void render_difference_map(const Eigen::VectorXd& map, int width, int height,
                           const std::filesystem::path& path) {
  if (static_cast<long>(width) * height != map.size())
    throw InputError("difference map size does not match width*height");
  const double scale = map.cwiseAbs().maxCoeff();
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(map.size()) * 3);
  const auto quantize = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  for (long i = 0; i < map.size(); ++i) {
    const double t = scale > 0.0 ? std::clamp(map[i] / scale, -1.0, 1.0) : 0.0;
    double r = 1.0, g = 1.0, b = 1.0;
    if (t > 0.0) {
      g = 1.0 - t;  // white -> red
      b = 1.0 - t;
    } else if (t < 0.0) {
      r = 1.0 + t;  // white -> blue
      g = 1.0 + t;
    }
    rgb[3 * i] = quantize(r);
    rgb[3 * i + 1] = quantize(g);
    rgb[3 * i + 2] = quantize(b);
  }
  data::write_ppm(path, rgb, width, height);
}

namespace {

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vector_from_json(const json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

}  // namespace

json cf_result_to_json(const CfResult& result) {
  const auto& c = result.config;
  json reps = json::array();
  for (const auto& rep : result.replicates) {
    json r = {{"z0", vector_to_json(rep.z0)},
              {"z_cf", vector_to_json(rep.z_cf)},
              {"objective_trace", rep.objective_trace}};
    r["switch_epoch"] =
        rep.switch_epoch ? json(*rep.switch_epoch) : json(nullptr);
    reps.push_back(std::move(r));
  }
  return {{"version", 1},
          {"config",
           {{"target_class", c.target_class},
            {"beta", c.beta},
            {"gamma", c.gamma},
            {"replicates", c.replicates},
            {"step_size", c.step_size},
            {"max_steps", c.max_steps},
            {"backend", c.backend == Backend::Spn ? "spn" : "mlp"},
            {"seed", c.seed},
            {"early_stop", c.early_stop}}},
          {"replicates", std::move(reps)},
          {"x_tilde", vector_to_json(result.x_tilde)},
          {"x_cf", vector_to_json(result.x_cf)},
          {"diff", vector_to_json(result.diff)}};
}

CfResult cf_result_from_json(const json& j) {
  if (j.value("version", 0) != 1) throw IoError("unsupported cf result version");
  CfResult result;
  const auto& c = j.at("config");
  result.config.target_class = c.at("target_class").get<int>();
  result.config.beta = c.at("beta").get<double>();
  result.config.gamma = c.at("gamma").get<double>();
  result.config.replicates = c.at("replicates").get<int>();
  result.config.step_size = c.at("step_size").get<double>();
  result.config.max_steps = c.at("max_steps").get<int>();
  const auto backend = c.at("backend").get<std::string>();
  if (backend != "spn" && backend != "mlp")
    throw IoError("unknown cf backend: " + backend);
  result.config.backend = backend == "spn" ? Backend::Spn : Backend::Mlp;
  result.config.seed = c.at("seed").get<std::uint64_t>();
  result.config.early_stop = c.at("early_stop").get<bool>();

  for (const auto& r : j.at("replicates")) {
    ReplicateResult rep;
    rep.z0 = vector_from_json(r.at("z0"));
    rep.z_cf = vector_from_json(r.at("z_cf"));
    if (!r.at("switch_epoch").is_null())
      rep.switch_epoch = r.at("switch_epoch").get<int>();
    rep.objective_trace = r.at("objective_trace").get<std::vector<double>>();
    result.replicates.push_back(std::move(rep));
  }
  result.x_tilde = vector_from_json(j.at("x_tilde"));
  result.x_cf = vector_from_json(j.at("x_cf"));
  result.diff = vector_from_json(j.at("diff"));
  return result;
}

}  // namespace spncf::counterfactual
