#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "spncf/circuit.hpp"
#include "spncf/circuit_json.hpp"
#include "spncf/counterfactual.hpp"
#include "spncf/data.hpp"
#include "spncf/metrics.hpp"
#include "spncf/structlearn.hpp"
#include "spncf/vae.hpp"

namespace py = pybind11;
using namespace spncf;

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

circuit::Circuit circuit_from_json_str(const std::string& text) {
  return circuit::from_json(nlohmann::json::parse(text));
}

py::dict stats_dict(const metrics::ClassifierStats& s) {
  py::dict d;
  d["accuracy"] = s.accuracy;
  d["mean_entropy"] = s.mean_entropy;
  d["auc"] = s.auc;
  d["precision"] = s.precision;
  d["recall"] = s.recall;
  return d;
}

vae::TrainConfig make_train_config(double beta0, double beta1, double beta2,
                                   double learning_rate, int epochs,
                                   int batch_size, std::uint64_t seed,
                                   int latent_dim,
                                   const std::vector<int>& hidden,
                                   double noise_sigma) {
  vae::TrainConfig c;
  c.beta0 = beta0;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.learning_rate = learning_rate;
  c.epochs = epochs;
  c.batch_size = batch_size;
  c.seed = seed;
  c.latent_dim = latent_dim;
  c.enc_hidden = hidden;
  c.dec_hidden = hidden;
  c.noise_sigma = noise_sigma;
  return c;
}

data::LabeledDataset make_dataset(const Eigen::MatrixXd& x,
                                  const std::vector<int>& y, int height,
                                  int width,
                                  const std::vector<int>& group_ids) {
  data::LabeledDataset ds;
  ds.instances = x;
  ds.labels = y;
  ds.height = height;
  ds.width = width;
  if (group_ids.empty()) {
    ds.group_ids.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
      ds.group_ids[i] = static_cast<int>(i);
  } else {
    ds.group_ids = group_ids;
  }
  return ds;
}

}  // namespace

PYBIND11_MODULE(spncf, m) {
  m.doc() = "SPN-guided counterfactual generation over VAE latent spaces";

  py::register_exception<Error>(m, "SpncfError");

  py::class_<circuit::Circuit>(m, "Circuit")
      .def_static("from_json", &circuit_from_json_str, py::arg("text"))
      .def("to_json", [](const circuit::Circuit& c) {
        return circuit::to_json(c).dump();
      })
      .def_property_readonly("dimension", &circuit::Circuit::dimension)
      .def_property_readonly("num_classes", &circuit::Circuit::num_classes)
      .def_property_readonly("node_count", &circuit::Circuit::node_count)
      .def("log_marginal",
           [](const circuit::Circuit& c, const Eigen::VectorXd& z) {
             return c.log_marginal(std::span(z.data(), z.size()));
           })
      .def("class_posterior",
           [](const circuit::Circuit& c, const Eigen::VectorXd& z) {
             return c.class_posterior(std::span(z.data(), z.size()))
                 .probabilities;
           })
      .def("argmax_class",
           [](const circuit::Circuit& c, const Eigen::VectorXd& z) {
             return c.argmax_class(std::span(z.data(), z.size()));
           })
      .def("grad_log_marginal",
           [](const circuit::Circuit& c, const Eigen::VectorXd& z) {
             return c.grad_z(std::span(z.data(), z.size()),
                             circuit::GradTarget::log_marginal());
           })
      .def("grad_log_posterior",
           [](const circuit::Circuit& c, const Eigen::VectorXd& z, int k) {
             return c.grad_z(std::span(z.data(), z.size()),
                             circuit::GradTarget::log_posterior(k));
           });

  m.def(
      "learn_spn",
      [](const Eigen::MatrixXd& rows, const std::vector<int>& labels,
         double independence_threshold, int min_instances,
         int num_row_clusters, std::uint64_t seed) {
        structlearn::LatentTable table;
        table.rows = rows;
        table.labels = labels;
        table.column_ids.resize(rows.cols());
        for (int j = 0; j < rows.cols(); ++j) table.column_ids[j] = j;
        structlearn::LearnConfig cfg;
        cfg.independence_threshold = independence_threshold;
        cfg.min_instances = min_instances;
        cfg.num_row_clusters = num_row_clusters;
        cfg.seed = seed;
        return structlearn::learn_spn(table, cfg);
      },
      py::arg("rows"), py::arg("labels"),
      py::arg("independence_threshold") = 0.3, py::arg("min_instances") = 30,
      py::arg("num_row_clusters") = 2, py::arg("seed") = 0);

  m.def(
      "frechet",
      [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
         const std::string& mode) {
        if (mode != "standard" && mode != "paper")
          throw InputError("mode must be 'standard' or 'paper'");
        return metrics::frechet(a, b,
                                mode == "standard"
                                    ? metrics::FrechetMode::Standard
                                    : metrics::FrechetMode::PaperLiteral);
      },
      py::arg("embed_org"), py::arg("embed_cf"), py::arg("mode") = "standard");
  m.def("validity", &metrics::validity, py::arg("original_preds"),
        py::arg("cf_preds"));
  m.def(
      "classifier_stats",
      [](const Eigen::MatrixXd& posteriors, const std::vector<int>& labels) {
        return stats_dict(metrics::classifier_stats(posteriors, labels));
      },
      py::arg("posteriors"), py::arg("labels"));

  m.def(
      "gen_ellipse_images",
      [](int n, int side, double noise_sigma, int group_size,
         const std::array<std::array<double, 2>, 2>& class_radii,
         double jitter, std::uint64_t seed) {
        data::EllipseParams p;
        p.n = n;
        p.side = side;
        p.noise_sigma = noise_sigma;
        p.group_size = group_size;
        p.class_radii = class_radii;
        p.jitter = jitter;
        p.seed = seed;
        const auto ds = data::gen_ellipse_images(p);
        py::dict d;
        d["instances"] = ds.instances;
        d["labels"] = ds.labels;
        d["group_ids"] = ds.group_ids;
        d["height"] = ds.height;
        d["width"] = ds.width;
        return d;
      },
      py::arg("n") = 200, py::arg("side") = 32, py::arg("noise_sigma") = 0.05,
      py::arg("group_size") = 4,
      py::arg("class_radii") = std::array<std::array<double, 2>, 2>{
          {{5.0, 4.0}, {9.0, 7.0}}},
      py::arg("jitter") = 2.0, py::arg("seed") = 0);

  m.def(
      "gen_latent_mixture",
      [](int n, int d, const std::vector<Eigen::VectorXd>& means,
         const std::vector<Eigen::MatrixXd>& covs, std::uint64_t seed) {
        const auto t = data::gen_latent_mixture(n, d, means, covs, seed);
        return py::make_tuple(t.rows, t.labels);
      },
      py::arg("n"), py::arg("d"), py::arg("class_means"),
      py::arg("class_covs"), py::arg("seed") = 0);

  py::class_<vae::VaeModel>(m, "VaeModel")
      .def_static("from_json",
                  [](const std::string& text) {
                    return vae::model_from_json(nlohmann::json::parse(text));
                  })
      .def("to_json",
           [](const vae::VaeModel& m_) { return vae::model_to_json(m_).dump(); })
      .def_property_readonly("latent_dim",
                             [](const vae::VaeModel& m_) { return m_.latent_dim; })
      .def_property_readonly(
          "num_classes", [](const vae::VaeModel& m_) { return m_.num_classes; })
      .def("encode_mean",
           [](const vae::VaeModel& m_, const Eigen::MatrixXd& x) {
             Eigen::MatrixXd mu, logvar;
             m_.encode(x, mu, logvar);
             return mu;
           })
      .def("decode", &vae::VaeModel::decode)
      .def("classify_log_softmax", &vae::VaeModel::classify_log_softmax)
      .def("argmax_class", &vae::VaeModel::argmax_class);

  m.def(
      "train_vae",
      [](const Eigen::MatrixXd& x_train, const std::vector<int>& y_train,
         const Eigen::MatrixXd& x_val, const std::vector<int>& y_val,
         int height, int width, double beta0, double beta1, double beta2,
         double learning_rate, int epochs, int batch_size, std::uint64_t seed,
         int latent_dim, const std::vector<int>& hidden, double noise_sigma) {
        const auto cfg =
            make_train_config(beta0, beta1, beta2, learning_rate, epochs,
                              batch_size, seed, latent_dim, hidden, noise_sigma);
        const auto result =
            vae::train(make_dataset(x_train, y_train, height, width, {}),
                       make_dataset(x_val, y_val, height, width, {}), cfg);
        py::list history;
        for (const auto& h : result.history) {
          py::dict e;
          e["mae"] = h.mae;
          e["mse"] = h.mse;
          e["kld"] = h.kld;
          e["accuracy"] = h.accuracy;
          history.append(e);
        }
        return py::make_tuple(result.model, history);
      },
      py::arg("x_train"), py::arg("y_train"), py::arg("x_val"),
      py::arg("y_val"), py::arg("height"), py::arg("width"),
      py::arg("beta0") = 1.0, py::arg("beta1") = 0.01, py::arg("beta2") = 1.0,
      py::arg("learning_rate") = 0.001, py::arg("epochs") = 10,
      py::arg("batch_size") = 50, py::arg("seed") = 0,
      py::arg("latent_dim") = 8, py::arg("hidden") = std::vector<int>{64},
      py::arg("noise_sigma") = 0.2);

  m.def(
      "generate_counterfactual",
      [](const vae::VaeModel& model, const Eigen::VectorXd& x,
         int target_class, double beta, double gamma, int replicates,
         double step_size, int max_steps, const std::string& backend,
         std::uint64_t seed, bool early_stop,
         const circuit::Circuit* circ) {
        counterfactual::CfConfig cfg;
        cfg.target_class = target_class;
        cfg.beta = beta;
        cfg.gamma = gamma;
        cfg.replicates = replicates;
        cfg.step_size = step_size;
        cfg.max_steps = max_steps;
        if (backend != "spn" && backend != "mlp")
          throw InputError("backend must be 'spn' or 'mlp'");
        cfg.backend = backend == "spn" ? counterfactual::Backend::Spn
                                       : counterfactual::Backend::Mlp;
        cfg.seed = seed;
        cfg.early_stop = early_stop;
        const auto result = counterfactual::generate(x, model, cfg, circ);
        py::list reps;
        for (const auto& rep : result.replicates) {
          py::dict r;
          r["z0"] = to_vec(rep.z0);
          r["z_cf"] = to_vec(rep.z_cf);
          r["switch_epoch"] = rep.switch_epoch
                                  ? py::object(py::int_(*rep.switch_epoch))
                                  : py::object(py::none());
          r["objective_trace"] = rep.objective_trace;
          reps.append(r);
        }
        py::dict d;
        d["replicates"] = reps;
        d["x_tilde"] = to_vec(result.x_tilde);
        d["x_cf"] = to_vec(result.x_cf);
        d["diff"] = to_vec(result.diff);
        return d;
      },
      py::arg("model"), py::arg("x"), py::arg("target_class"),
      py::arg("beta") = 0.0, py::arg("gamma") = 0.0, py::arg("replicates") = 1,
      py::arg("step_size") = 0.05, py::arg("max_steps") = 1000,
      py::arg("backend") = "spn", py::arg("seed") = 0,
      py::arg("early_stop") = false, py::arg("circuit") = nullptr);
}
