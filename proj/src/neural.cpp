#include "spncf/neural.hpp"

#include <cmath>
#include <string>

namespace spncf::neural {

using nlohmann::json;

std::size_t Tensor::size() const {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return shape.empty() ? 0 : n;
}

Eigen::MatrixXd Tensor::as_matrix() const {
  if (size() != values.size())
    throw InputError("tensor value count does not match its shape");
  int rows = 1, cols = 0;
  if (shape.size() == 1) {
    cols = shape[0];
  } else if (shape.size() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else {
    throw InputError("tensor must be rank 1 or 2 to view as a matrix");
  }
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      m(r, c) = values[static_cast<std::size_t>(r) * cols + c];
  return m;
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
  Tensor t;
  t.shape = {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) t.values.push_back(m(r, c));
  return t;
}

void DenseNetSpec::check() const {
  if (input_dim <= 0) throw InputError("net input_dim must be positive");
  if (widths.empty()) throw InputError("net needs at least one layer");
  if (widths.size() != activations.size())
    throw InputError("one activation per layer required");
  for (int w : widths)
    if (w <= 0) throw InputError("layer widths must be positive");
  if (gaussian_noise_sigma < 0.0)
    throw InputError("noise sigma must be non-negative");
}

DenseNetParams init_params(const DenseNetSpec& spec, std::uint64_t seed) {
  spec.check();
  Rng rng(seed);
  DenseNetParams p;
  int fan_in = spec.input_dim;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_out = spec.widths[l];
    const double limit = spec.activations[l] == Activation::ReLU
                             ? std::sqrt(6.0 / fan_in)
                             : std::sqrt(6.0 / (fan_in + fan_out));
    Eigen::MatrixXd W(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c)
        W(r, c) = (2.0 * rng.uniform() - 1.0) * limit;
    p.W.push_back(std::move(W));
    p.b.push_back(Eigen::VectorXd::Zero(fan_out));
    fan_in = fan_out;
  }
  return p;
}

namespace {

void apply_activation(Activation act, const Eigen::MatrixXd& pre,
                      Eigen::MatrixXd& post) {
  switch (act) {
    case Activation::ReLU:
      post = pre.cwiseMax(0.0);
      break;
    case Activation::Identity:
      post = pre;
      break;
    case Activation::Sigmoid:
      post = (1.0 + (-pre.array()).exp()).inverse().matrix();
      break;
  }
}

// dL/dpre from dL/dpost; uses pre for ReLU and post for Sigmoid.
Eigen::MatrixXd activation_backward(Activation act, const Eigen::MatrixXd& pre,
                                    const Eigen::MatrixXd& post,
                                    const Eigen::MatrixXd& dpost) {
  switch (act) {
    case Activation::ReLU:
      return ((pre.array() > 0.0).cast<double>() * dpost.array()).matrix();
    case Activation::Identity:
      return dpost;
    case Activation::Sigmoid:
      return (post.array() * (1.0 - post.array()) * dpost.array()).matrix();
  }
  return dpost;  // unreachable
}

}  // namespace

Trace forward(const DenseNetSpec& spec, const DenseNetParams& params,
              const Eigen::MatrixXd& input, Mode mode, Rng* rng) {
  spec.check();
  if (input.cols() != spec.input_dim)
    throw InputError("net input width " + std::to_string(input.cols()) +
                     " does not match spec input_dim " +
                     std::to_string(spec.input_dim));
  if (static_cast<int>(params.W.size()) != spec.num_layers())
    throw InputError("parameter layer count does not match spec");
  const bool noisy = mode == Mode::Train && spec.gaussian_noise_sigma > 0.0;
  if (noisy && rng == nullptr)
    throw InputError("Train mode with noise requires an rng");

  Trace t;
  t.input = input;
  t.pre.resize(spec.num_layers());
  t.post.resize(spec.num_layers());
  const Eigen::MatrixXd* x = &t.input;
  for (int l = 0; l < spec.num_layers(); ++l) {
    t.pre[l] = (*x) * params.W[l].transpose();
    t.pre[l].rowwise() += params.b[l].transpose();
    apply_activation(spec.activations[l], t.pre[l], t.post[l]);
    if (noisy && l + 1 < spec.num_layers()) {
      for (int r = 0; r < t.post[l].rows(); ++r)
        for (int c = 0; c < t.post[l].cols(); ++c)
          t.post[l](r, c) += spec.gaussian_noise_sigma * rng->normal();
    }
    x = &t.post[l];
  }
  return t;
}

Gradients backward(const DenseNetSpec& spec, const DenseNetParams& params,
                   const Trace& trace, const Eigen::MatrixXd& output_grad) {
  const int L = spec.num_layers();
  if (output_grad.rows() != trace.output().rows() ||
      output_grad.cols() != trace.output().cols())
    throw InputError("output gradient shape does not match trace output");

  Gradients g;
  g.dW.resize(L);
  g.db.resize(L);
  Eigen::MatrixXd dpost = output_grad;
  for (int l = L - 1; l >= 0; --l) {
    const Eigen::MatrixXd dpre =
        activation_backward(spec.activations[l], trace.pre[l], trace.post[l],
                            dpost);
    const Eigen::MatrixXd& below = l == 0 ? trace.input : trace.post[l - 1];
    g.dW[l] = dpre.transpose() * below;
    g.db[l] = dpre.colwise().sum().transpose();
    dpost = dpre * params.W[l];
  }
  g.dinput = std::move(dpost);
  return g;
}

AdamState AdamState::init(const DenseNetParams& params, double lr) {
  AdamState s;
  s.lr = lr;
  for (const auto& W : params.W) {
    s.mW.push_back(Eigen::MatrixXd::Zero(W.rows(), W.cols()));
    s.vW.push_back(Eigen::MatrixXd::Zero(W.rows(), W.cols()));
  }
  for (const auto& b : params.b) {
    s.mb.push_back(Eigen::VectorXd::Zero(b.size()));
    s.vb.push_back(Eigen::VectorXd::Zero(b.size()));
  }
  return s;
}

namespace {

template <typename Mat>
void adam_update(Mat& param, Mat& m, Mat& v, const Mat& grad,
                 const AdamState& s, double bc1, double bc2,
                 const std::string& name) {
  if (!grad.allFinite())
    throw TrainError("non-finite gradient for parameter " + name);
  m = s.beta1 * m + (1.0 - s.beta1) * grad;
  v = s.beta2 * v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  param.array() -= s.lr * (m.array() / bc1) /
                   ((v.array() / bc2).sqrt() + s.eps);
}

}  // namespace

void adam_step(AdamState& state, DenseNetParams& params,
               const Gradients& grads) {
  if (params.W.size() != grads.dW.size() || params.b.size() != grads.db.size())
    throw TrainError("gradient layer count does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  for (std::size_t l = 0; l < params.W.size(); ++l) {
    adam_update(params.W[l], state.mW[l], state.vW[l], grads.dW[l], state, bc1,
                bc2, "W" + std::to_string(l));
    adam_update(params.b[l], state.mb[l], state.vb[l], grads.db[l], state, bc1,
                bc2, "b" + std::to_string(l));
  }
}

GradCheckReport grad_check(const DenseNetSpec& spec,
                           const DenseNetParams& params,
                           const Eigen::MatrixXd& input, const OutputLoss& loss,
                           double tolerance, int num_params,
                           std::uint64_t seed) {
  const auto trace = forward(spec, params, input, Mode::Eval);
  const auto [value, dout] = loss(trace.output());
  (void)value;
  const auto analytic = backward(spec, params, trace, dout);

  // flat index over all W then all b entries
  std::vector<std::pair<int, long>> slots;  // (layer, flat index; b offset by W size)
  long total = 0;
  for (std::size_t l = 0; l < params.W.size(); ++l)
    total += params.W[l].size() + params.b[l].size();
  Rng rng(seed);
  const int n_check = static_cast<int>(std::min<long>(num_params, total));
  for (int i = 0; i < n_check; ++i) {
    long flat = static_cast<long>(rng.index(static_cast<std::size_t>(total)));
    for (std::size_t l = 0; l < params.W.size(); ++l) {
      const long wsize = params.W[l].size(), bsize = params.b[l].size();
      if (flat < wsize + bsize) {
        slots.emplace_back(static_cast<int>(l), flat);
        break;
      }
      flat -= wsize + bsize;
    }
  }

  const double h = 1e-5;
  GradCheckReport report;
  report.num_checked = n_check;
  DenseNetParams probe = params;
  for (const auto& [l, flat] : slots) {
    const long wsize = params.W[l].size();
    double* slot = flat < wsize ? probe.W[l].data() + flat
                                : probe.b[l].data() + (flat - wsize);
    const double analytic_g = flat < wsize
                                  ? analytic.dW[l](flat % probe.W[l].rows(),
                                                   flat / probe.W[l].rows())
                                  : analytic.db[l](flat - wsize);
    const double saved = *slot;
    *slot = saved + h;
    const double up = loss(forward(spec, probe, input, Mode::Eval).output()).first;
    *slot = saved - h;
    const double dn = loss(forward(spec, probe, input, Mode::Eval).output()).first;
    *slot = saved;
    const double fd = (up - dn) / (2.0 * h);
    const double rel =
        std::abs(fd - analytic_g) / std::max(1.0, std::abs(fd));
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

namespace {

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Identity: return "identity";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation activation_from_name(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw IoError("unknown activation: " + s);
}

}  // namespace

json net_to_json(const DenseNetSpec& spec, const DenseNetParams& params) {
  json acts = json::array();
  for (auto a : spec.activations) acts.push_back(activation_name(a));
  json layers = json::array();
  for (std::size_t l = 0; l < params.W.size(); ++l) {
    json w = json::array();
    for (int r = 0; r < params.W[l].rows(); ++r)
      for (int c = 0; c < params.W[l].cols(); ++c)
        w.push_back(params.W[l](r, c));
    json b = json::array();
    for (int i = 0; i < params.b[l].size(); ++i) b.push_back(params.b[l][i]);
    layers.push_back({{"W", std::move(w)}, {"b", std::move(b)}});
  }
  return {{"version", 1},
          {"input_dim", spec.input_dim},
          {"widths", spec.widths},
          {"activations", std::move(acts)},
          {"noise_sigma", spec.gaussian_noise_sigma},
          {"layers", std::move(layers)}};
}

void net_from_json(const json& j, DenseNetSpec& spec, DenseNetParams& params) {
  if (j.value("version", 0) != 1) throw IoError("unsupported net version");
  spec = DenseNetSpec{};
  spec.input_dim = j.at("input_dim").get<int>();
  spec.widths = j.at("widths").get<std::vector<int>>();
  for (const auto& a : j.at("activations"))
    spec.activations.push_back(activation_from_name(a.get<std::string>()));
  spec.gaussian_noise_sigma = j.at("noise_sigma").get<double>();
  spec.check();

  params = DenseNetParams{};
  const auto& layers = j.at("layers");
  if (static_cast<int>(layers.size()) != spec.num_layers())
    throw IoError("net json layer count does not match spec");
  int fan_in = spec.input_dim;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_out = spec.widths[l];
    const auto& wj = layers[l].at("W");
    const auto& bj = layers[l].at("b");
    if (static_cast<long>(wj.size()) != static_cast<long>(fan_out) * fan_in ||
        static_cast<int>(bj.size()) != fan_out)
      throw IoError("net json parameter size mismatch in layer " +
                    std::to_string(l));
    Eigen::MatrixXd W(fan_out, fan_in);
    for (int r = 0; r < fan_out; ++r)
      for (int c = 0; c < fan_in; ++c)
        W(r, c) = wj[static_cast<std::size_t>(r) * fan_in + c].get<double>();
    Eigen::VectorXd b(fan_out);
    for (int i = 0; i < fan_out; ++i) b[i] = bj[i].get<double>();
    params.W.push_back(std::move(W));
    params.b.push_back(std::move(b));
    fan_in = fan_out;
  }
}

}  // namespace spncf::neural
