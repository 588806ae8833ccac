#include "spncf/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <limits>
#include <map>

#include "spncf/circuit_json.hpp"
#include "spncf/counterfactual.hpp"
#include "spncf/data.hpp"
#include "spncf/image_io.hpp"
#include "spncf/io_util.hpp"
#include "spncf/metrics.hpp"
#include "spncf/structlearn.hpp"
#include "spncf/vae.hpp"

namespace spncf::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

const json& ExperimentConfig::section(const std::string& name) const {
  static const json empty = json::object();
  const auto it = raw.find(name);
  return it == raw.end() ? empty : *it;
}

namespace {

// "a.b.c=value" with the value parsed as JSON when possible, else a string.
void apply_override(json& root, const std::string& entry) {
  const auto eq = entry.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + entry);
  const std::string path = entry.substr(0, eq);
  const std::string value = entry.substr(eq + 1);

  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw ConfigError("empty key in override: " + entry);
    if (dot == std::string::npos) {
      const json parsed = json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    if (!node->is_object() && !node->is_null())
      throw ConfigError("override path crosses a non-object: " + entry);
    start = dot + 1;
  }
}

}  // namespace

ExperimentConfig config_from_json(json raw,
                                  const std::vector<std::string>& overrides) {
  if (!raw.is_object()) throw ConfigError("config root must be a JSON object");
  if (const char* env = std::getenv("SPNCF_OUTPUT_ROOT"); env && *env)
    raw["output_root"] = std::string(env);
  for (const auto& o : overrides) apply_override(raw, o);

  ExperimentConfig cfg;
  cfg.output_root = raw.value("output_root", std::string("out"));
  cfg.seed = raw.value("seed", std::uint64_t{0});
  cfg.raw = std::move(raw);
  cfg.config_hash = io::fnv1a_hex(cfg.raw.dump());
  return cfg;
}

ExperimentConfig load_config(const fs::path& path,
                             const std::vector<std::string>& overrides) {
  return config_from_json(io::read_json_file(path), overrides);
}

namespace {

std::uint64_t stage_seed(const ExperimentConfig& cfg, std::uint64_t tag,
                         int fold) {
  return splitmix64(cfg.seed ^ (tag << 16) ^ static_cast<std::uint64_t>(fold));
}

int fold_count(const ExperimentConfig& cfg) {
  const int folds = cfg.raw.value("folds", 1);
  if (folds < 1) throw ConfigError("folds must be >= 1");
  return folds;
}

fs::path fold_dir(const ExperimentConfig& cfg, int fold) {
  if (fold_count(cfg) == 1) return cfg.output_root;
  return cfg.output_root / ("fold" + std::to_string(fold));
}

void write_manifest(const ExperimentConfig& cfg, const fs::path& dir,
                    const std::string& stage, std::uint64_t seed,
                    const std::vector<std::string>& outputs) {
  const json m = {{"stage", stage},
                  {"version", 1},
                  {"config_hash", cfg.config_hash},
                  {"seed", seed},
                  {"outputs", outputs}};
  io::write_file_atomic(dir / (stage + "_manifest.json"), m.dump(2) + "\n");
}

void require_artifact(const fs::path& path, const std::string& stage,
                      const std::string& producer) {
  if (!fs::exists(path))
    throw IoError("stage " + stage + ": missing upstream artifact " +
                  path.string() + " (run " + producer + " first)");
}

data::EllipseParams ellipse_params(const ExperimentConfig& cfg,
                                   std::uint64_t seed) {
  const json& d = cfg.section("dataset");
  data::EllipseParams p;
  p.n = d.value("n", p.n);
  p.side = d.value("side", p.side);
  if (d.contains("class_radii")) {
    const auto& cr = d.at("class_radii");
    for (int k = 0; k < 2; ++k)
      for (int a = 0; a < 2; ++a)
        p.class_radii[k][a] = cr.at(k).at(a).get<double>();
  }
  p.noise_sigma = d.value("noise_sigma", p.noise_sigma);
  p.group_size = d.value("group_size", p.group_size);
  p.jitter = d.value("jitter", p.jitter);
  p.background = d.value("background", p.background);
  p.foreground = d.value("foreground", p.foreground);
  p.seed = seed;
  return p;
}

vae::TrainConfig train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  const json& v = cfg.section("vae");
  vae::TrainConfig t;
  t.beta0 = v.value("beta0", t.beta0);
  t.beta1 = v.value("beta1", t.beta1);
  t.beta2 = v.value("beta2", t.beta2);
  t.learning_rate = v.value("learning_rate", t.learning_rate);
  t.epochs = v.value("epochs", t.epochs);
  t.batch_size = v.value("batch_size", t.batch_size);
  t.latent_dim = v.value("latent_dim", t.latent_dim);
  t.enc_hidden = v.value("enc_hidden", t.enc_hidden);
  t.dec_hidden = v.value("dec_hidden", t.dec_hidden);
  t.clf_hidden = v.value("clf_hidden", t.clf_hidden);
  t.noise_sigma = v.value("noise_sigma", t.noise_sigma);
  t.seed = seed;
  return t;
}

structlearn::LearnConfig learn_config(const ExperimentConfig& cfg,
                                      std::uint64_t seed) {
  const json& s = cfg.section("spn");
  structlearn::LearnConfig l;
  l.independence_threshold =
      s.value("independence_threshold", l.independence_threshold);
  l.min_instances = s.value("min_instances", l.min_instances);
  l.num_row_clusters = s.value("num_row_clusters", l.num_row_clusters);
  l.sigma_floor = s.value("sigma_floor", l.sigma_floor);
  l.seed = seed;
  return l;
}

struct GridPoint {
  counterfactual::Backend backend;
  double beta = 0.0;
  double gamma = 0.0;

  std::string backend_name() const {
    return backend == counterfactual::Backend::Spn ? "spn" : "mlp";
  }
  std::string key() const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_b%g_g%g", backend_name().c_str(), beta,
                  gamma);
    return buf;
  }
};

counterfactual::Backend backend_from_name(const std::string& s) {
  if (s == "spn") return counterfactual::Backend::Spn;
  if (s == "mlp") return counterfactual::Backend::Mlp;
  throw ConfigError("unknown backend: " + s);
}

// Explicit "grid" list, or the cross product backends x betas x gammas with
// MLP x gamma>0 combinations dropped (no density to preserve).
std::vector<GridPoint> cf_grid(const ExperimentConfig& cfg) {
  const json& c = cfg.section("cf");
  std::vector<GridPoint> grid;
  if (c.contains("grid")) {
    for (const auto& g : c.at("grid")) {
      GridPoint p;
      p.backend = backend_from_name(g.at("backend").get<std::string>());
      p.beta = g.value("beta", 0.0);
      p.gamma = g.value("gamma", 0.0);
      grid.push_back(p);
    }
  } else {
    const auto backends =
        c.value("backends", std::vector<std::string>{"spn", "mlp"});
    const auto betas = c.value("betas", std::vector<double>{0.0, 1.0});
    const auto gammas = c.value("gammas", std::vector<double>{0.0, 1.0});
    for (const auto& b : backends)
      for (double beta : betas)
        for (double gamma : gammas) {
          GridPoint p{backend_from_name(b), beta, gamma};
          if (p.backend == counterfactual::Backend::Mlp && gamma > 0.0)
            continue;
          grid.push_back(p);
        }
  }
  if (grid.empty()) throw ConfigError("cf grid is empty");
  return grid;
}

// Indices of the test-split instances a cf stage works on.
std::vector<int> cf_instances(const ExperimentConfig& cfg,
                              const json& splits) {
  std::vector<int> test = splits.at("test").get<std::vector<int>>();
  const int cap = cfg.section("cf").value("instances", 100);
  if (cap >= 0 && static_cast<int>(test.size()) > cap) test.resize(cap);
  if (test.empty())
    throw ConfigError("cf stages need a non-empty test split");
  return test;
}

std::uint64_t instance_cf_seed(std::uint64_t base, int instance_index) {
  // shared across grid points so beta/gamma variants are seed-paired
  return splitmix64(base ^ (0x9e3779b97f4a7c15ULL *
                            static_cast<std::uint64_t>(instance_index + 1)));
}

int backend_argmax(const GridPoint& g, const vae::VaeModel& model,
                   const circuit::Circuit* circuit, const Eigen::VectorXd& z) {
  if (g.backend == counterfactual::Backend::Spn)
    return circuit->argmax_class(std::span(z.data(), z.size()));
  return model.argmax_class(z);
}

// ---- stages ---------------------------------------------------------------

void run_gen_data(const ExperimentConfig& cfg) {
  const auto seed = stage_seed(cfg, 0xD474, 0);
  const auto params = ellipse_params(cfg, seed);
  const auto dataset = data::gen_ellipse_images(params);
  fs::create_directories(cfg.output_root);
  data::save_dataset(dataset, cfg.output_root / "data");

  std::vector<std::string> outputs = {"data/manifest.json"};
  const json& split_cfg = cfg.section("dataset").value("split", json::object());
  for (int fold = 0; fold < fold_count(cfg); ++fold) {
    data::SplitSpec spec;
    spec.train = split_cfg.value("train", spec.train);
    spec.val = split_cfg.value("val", spec.val);
    spec.test = split_cfg.value("test", spec.test);
    spec.group_aware = split_cfg.value("group_aware", spec.group_aware);
    spec.seed = stage_seed(cfg, 0x5713, fold);
    const auto idx = data::split(dataset, spec);
    const json splits = {
        {"train", idx.train}, {"val", idx.val}, {"test", idx.test}};
    fs::create_directories(fold_dir(cfg, fold));
    io::write_file_atomic(fold_dir(cfg, fold) / "splits.json",
                          splits.dump() + "\n");
    outputs.push_back(
        fs::relative(fold_dir(cfg, fold) / "splits.json", cfg.output_root)
            .string());
  }
  write_manifest(cfg, cfg.output_root, "gen-data", seed, outputs);
}

struct LoadedData {
  data::LabeledDataset dataset;
  json splits;
};

LoadedData load_data(const ExperimentConfig& cfg, int fold,
                     const std::string& stage) {
  require_artifact(cfg.output_root / "data" / "manifest.json", stage,
                   "gen-data");
  require_artifact(fold_dir(cfg, fold) / "splits.json", stage, "gen-data");
  LoadedData d;
  d.dataset = data::load_dataset(cfg.output_root / "data");
  d.splits = io::read_json_file(fold_dir(cfg, fold) / "splits.json");
  return d;
}

void run_train_vae(const ExperimentConfig& cfg) {
  for (int fold = 0; fold < fold_count(cfg); ++fold) {
    const auto d = load_data(cfg, fold, "train-vae");
    const auto seed = stage_seed(cfg, 0x7EA1, fold);
    const auto tconfig = train_config(cfg, seed);
    const auto train_set =
        data::subset(d.dataset, d.splits.at("train").get<std::vector<int>>());
    const auto val_set =
        data::subset(d.dataset, d.splits.at("val").get<std::vector<int>>());
    const auto result = vae::train(train_set, val_set, tconfig);

    const auto dir = fold_dir(cfg, fold);
    io::write_file_atomic(dir / "model.json",
                          vae::model_to_json(result.model).dump(2) + "\n");
    std::string hist = "epoch,mae,mse,kld,accuracy\n";
    for (std::size_t e = 0; e < result.history.size(); ++e) {
      const auto& h = result.history[e];
      hist += std::to_string(e) + ',' + io::format_double(h.mae) + ',' +
              io::format_double(h.mse) + ',' + io::format_double(h.kld) + ',' +
              io::format_double(h.accuracy) + '\n';
    }
    io::write_file_atomic(dir / "history.csv", hist);
    write_manifest(cfg, dir, "train-vae", seed, {"model.json", "history.csv"});
  }
}

vae::VaeModel load_model(const ExperimentConfig& cfg, int fold,
                         const std::string& stage) {
  const auto path = fold_dir(cfg, fold) / "model.json";
  require_artifact(path, stage, "train-vae");
  return vae::model_from_json(io::read_json_file(path));
}

void run_export_latents(const ExperimentConfig& cfg) {
  for (int fold = 0; fold < fold_count(cfg); ++fold) {
    const auto d = load_data(cfg, fold, "export-latents");
    const auto model = load_model(cfg, fold, "export-latents");
    const auto seed = stage_seed(cfg, 0x1A7E, fold);
    const int R = cfg.section("latents").value("samples_per_instance", 1);

    const auto dir = fold_dir(cfg, fold);
    std::vector<std::string> outputs;
    int part = 0;
    for (const char* name : {"train", "val", "test"}) {
      const auto subset_ds =
          data::subset(d.dataset, d.splits.at(name).get<std::vector<int>>());
      const auto latents = vae::export_latents(
          model, subset_ds, R, splitmix64(seed ^ static_cast<std::uint64_t>(part)));
      const std::string file = std::string("latents_") + name + ".csv";
      structlearn::save_latent_csv(latents.table, latents.group_ids, dir / file);
      outputs.push_back(file);
      ++part;
    }
    write_manifest(cfg, dir, "export-latents", seed, outputs);
  }
}

void run_learn_spn(const ExperimentConfig& cfg) {
  for (int fold = 0; fold < fold_count(cfg); ++fold) {
    const auto dir = fold_dir(cfg, fold);
    require_artifact(dir / "latents_train.csv", "learn-spn", "export-latents");
    const auto latents = structlearn::load_latent_csv(dir / "latents_train.csv");
    const auto seed = stage_seed(cfg, 0x59A0, fold);
    const auto circuit = structlearn::learn_spn(latents.table,
                                                learn_config(cfg, seed));
    circuit::save_circuit(circuit, dir / "circuit.json");
    write_manifest(cfg, dir, "learn-spn", seed, {"circuit.json"});
  }
}

json stats_to_json(const metrics::ClassifierStats& s) {
  return {{"accuracy", s.accuracy},
          {"mean_entropy", s.mean_entropy},
          {"auc", s.auc},
          {"precision", s.precision},
          {"recall", s.recall}};
}

void run_eval_clf(const ExperimentConfig& cfg) {
  for (int fold = 0; fold < fold_count(cfg); ++fold) {
    const auto d = load_data(cfg, fold, "eval-clf");
    const auto model = load_model(cfg, fold, "eval-clf");
    const auto dir = fold_dir(cfg, fold);
    require_artifact(dir / "circuit.json", "eval-clf", "learn-spn");
    const auto circuit = circuit::load_circuit(dir / "circuit.json");

    const auto test =
        data::subset(d.dataset, d.splits.at("test").get<std::vector<int>>());
    Eigen::MatrixXd mu, logvar;
    model.encode(test.instances, mu, logvar);

    Eigen::MatrixXd spn_post(mu.rows(), circuit.num_classes());
    for (int r = 0; r < mu.rows(); ++r) {
      const Eigen::VectorXd z = mu.row(r);
      const auto post = circuit.class_posterior(std::span(z.data(), z.size()));
      for (int k = 0; k < circuit.num_classes(); ++k)
        spn_post(r, k) = post.probabilities[k];
    }
    const Eigen::MatrixXd mlp_post =
        model.classify_log_softmax(mu).array().exp().matrix();

    const auto spn_stats = metrics::classifier_stats(spn_post, test.labels);
    const auto mlp_stats = metrics::classifier_stats(mlp_post, test.labels);
    const json report = {{"spn", stats_to_json(spn_stats)},
                         {"mlp", stats_to_json(mlp_stats)},
                         {"test_instances", test.size()}};
    io::write_file_atomic(dir / "clf_report.json", report.dump(2) + "\n");
    write_manifest(cfg, dir, "eval-clf", stage_seed(cfg, 0xEC1F, fold),
                   {"clf_report.json"});
  }
}

void run_gen_cf(const ExperimentConfig& cfg) {
  for (int fold = 0; fold < fold_count(cfg); ++fold) {
    const auto d = load_data(cfg, fold, "gen-cf");
    const auto model = load_model(cfg, fold, "gen-cf");
    const auto dir = fold_dir(cfg, fold);
    require_artifact(dir / "circuit.json", "gen-cf", "learn-spn");
    const auto circuit = circuit::load_circuit(dir / "circuit.json");

    const json& c = cfg.section("cf");
    const auto grid = cf_grid(cfg);
    const auto instances = cf_instances(cfg, d.splits);
    const auto seed = stage_seed(cfg, 0xCF00, fold);

    std::vector<std::string> outputs;
    for (const auto& g : grid) {
      const fs::path gdir = dir / "cf" / g.key();
      fs::create_directories(gdir);
      json index = json::array();
      for (int inst : instances) {
        const Eigen::VectorXd x = d.dataset.instances.row(inst);
        Eigen::MatrixXd mu, logvar;
        model.encode(x.transpose(), mu, logvar);
        const Eigen::VectorXd zmean = mu.row(0);
        const int pred = backend_argmax(g, model, &circuit, zmean);

        counterfactual::CfConfig cc;
        cc.target_class = (pred + 1) % model.num_classes;
        cc.beta = g.beta;
        cc.gamma = g.gamma;
        cc.backend = g.backend;
        cc.replicates = c.value("replicates", 1);
        cc.step_size = c.value("step_size", 0.05);
        cc.max_steps = c.value("max_steps", 1000);
        cc.early_stop = c.value("early_stop", false);
        cc.seed = instance_cf_seed(seed, inst);

        const auto result = counterfactual::generate(
            x, model, cc, g.backend == counterfactual::Backend::Spn
                              ? &circuit
                              : nullptr);
        char name[32];
        std::snprintf(name, sizeof(name), "cf_%06d.json", inst);
        io::write_file_atomic(gdir / name,
                              counterfactual::cf_result_to_json(result).dump() +
                                  "\n");
        index.push_back({{"instance", inst},
                         {"file", name},
                         {"label", d.dataset.labels[inst]},
                         {"original_pred", pred},
                         {"target_class", cc.target_class}});
      }
      const json gindex = {{"backend", g.backend_name()},
                           {"beta", g.beta},
                           {"gamma", g.gamma},
                           {"instances", std::move(index)}};
      io::write_file_atomic(gdir / "index.json", gindex.dump(2) + "\n");
      outputs.push_back(("cf" / fs::path(g.key()) / "index.json").string());
    }
    write_manifest(cfg, dir, "gen-cf", seed, outputs);
  }
}

Eigen::VectorXd replicate_mean(
    const std::vector<counterfactual::ReplicateResult>& reps, bool use_final) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(reps[0].z0.size());
  for (const auto& r : reps) sum += use_final ? r.z_cf : r.z0;
  return sum / static_cast<double>(reps.size());
}

void run_eval_cf(const ExperimentConfig& cfg) {
  for (int fold = 0; fold < fold_count(cfg); ++fold) {
    const auto d = load_data(cfg, fold, "eval-cf");
    const auto model = load_model(cfg, fold, "eval-cf");
    const auto dir = fold_dir(cfg, fold);
    require_artifact(dir / "circuit.json", "eval-cf", "learn-spn");
    const auto circuit = circuit::load_circuit(dir / "circuit.json");
    const double beta1 = cfg.section("vae").value("beta1", 0.01);

    std::vector<metrics::MetricsReport> reports;
    for (const auto& g : cf_grid(cfg)) {
      const fs::path gdir = dir / "cf" / g.key();
      require_artifact(gdir / "index.json", "eval-cf", "gen-cf");
      const json index = io::read_json_file(gdir / "index.json");

      std::vector<int> orig_latent, cf_latent, orig_pipe, cf_pipe;
      std::vector<double> l2s, switch_epochs;
      std::vector<Eigen::VectorXd> emb_org, emb_cf;
      for (const auto& entry : index.at("instances")) {
        const int inst = entry.at("instance").get<int>();
        const auto result = counterfactual::cf_result_from_json(
            io::read_json_file(gdir / entry.at("file").get<std::string>()));
        const Eigen::VectorXd x = d.dataset.instances.row(inst);

        // latent-level predictions at the replicate means
        const auto z0 = replicate_mean(result.replicates, false);
        const auto zcf = replicate_mean(result.replicates, true);
        orig_latent.push_back(backend_argmax(g, model, &circuit, z0));
        cf_latent.push_back(backend_argmax(g, model, &circuit, zcf));

        // pipeline-level: re-encode the original and the decoded cf
        Eigen::MatrixXd mu, logvar;
        model.encode(x.transpose(), mu, logvar);
        const Eigen::VectorXd zx = mu.row(0);
        model.encode(result.x_cf.transpose(), mu, logvar);
        const Eigen::VectorXd zxcf = mu.row(0);
        orig_pipe.push_back(backend_argmax(g, model, &circuit, zx));
        cf_pipe.push_back(backend_argmax(g, model, &circuit, zxcf));

        l2s.push_back(metrics::proximity_l2(
            std::span(x.data(), x.size()),
            std::span(result.x_cf.data(), result.x_cf.size())));
        for (const auto& rep : result.replicates)
          if (rep.switch_epoch) switch_epochs.push_back(*rep.switch_epoch);
        emb_org.push_back(zx);
        emb_cf.push_back(zxcf);
      }

      metrics::MetricsReport r;
      r.beta1 = beta1;
      r.classifier = g.backend_name();
      r.beta = g.beta;
      r.gamma = g.gamma;
      r.validity_latent = metrics::validity(orig_latent, cf_latent);
      r.validity_pipeline = metrics::validity(orig_pipe, cf_pipe);
      r.mean_l2 = 0.0;
      for (double v : l2s) r.mean_l2 += v;
      r.mean_l2 /= l2s.size();

      Eigen::MatrixXd mo(emb_org.size(), model.latent_dim);
      Eigen::MatrixXd mc(emb_cf.size(), model.latent_dim);
      for (std::size_t i = 0; i < emb_org.size(); ++i) {
        mo.row(i) = emb_org[i];
        mc.row(i) = emb_cf[i];
      }
      r.frechet_paper = metrics::frechet(mo, mc, metrics::FrechetMode::PaperLiteral);
      r.frechet_standard = metrics::frechet(mo, mc, metrics::FrechetMode::Standard);
      if (switch_epochs.empty()) {
        r.mean_switch_epoch = std::numeric_limits<double>::quiet_NaN();
      } else {
        r.mean_switch_epoch = 0.0;
        for (double v : switch_epochs) r.mean_switch_epoch += v;
        r.mean_switch_epoch /= switch_epochs.size();
      }
      reports.push_back(std::move(r));
    }

    io::write_file_atomic(dir / "report.csv", metrics::report_csv(reports));
    io::write_file_atomic(dir / "report.txt", metrics::report_table(reports));
    write_manifest(cfg, dir, "eval-cf", stage_seed(cfg, 0xECF0, fold),
                   {"report.csv", "report.txt"});
  }
}

void run_diffmap(const ExperimentConfig& cfg) {
  for (int fold = 0; fold < fold_count(cfg); ++fold) {
    const auto d = load_data(cfg, fold, "diffmap");
    const auto dir = fold_dir(cfg, fold);
    const int render_count = cfg.section("diffmap").value("render_count", 8);

    std::vector<std::string> outputs;
    json summary = json::array();
    for (const auto& g : cf_grid(cfg)) {
      const fs::path gdir = dir / "cf" / g.key();
      require_artifact(gdir / "index.json", "diffmap", "gen-cf");
      const json index = io::read_json_file(gdir / "index.json");
      const fs::path outdir = dir / "diffmaps" / g.key();
      fs::create_directories(outdir);

      int rendered = 0, localized = 0, successful = 0;
      for (const auto& entry : index.at("instances")) {
        const int inst = entry.at("instance").get<int>();
        const auto result = counterfactual::cf_result_from_json(
            io::read_json_file(gdir / entry.at("file").get<std::string>()));

        // localization against the generator's ground-truth region
        bool flipped = false;
        for (const auto& rep : result.replicates)
          if (rep.switch_epoch) flipped = true;
        if (flipped && inst < static_cast<int>(d.dataset.region_bboxes.size())) {
          const auto& bbox = d.dataset.region_bboxes[inst];
          double inside = 0.0, outside = 0.0;
          for (int y = 0; y < d.dataset.height; ++y)
            for (int x = 0; x < d.dataset.width; ++x) {
              const double m = std::abs(result.diff[y * d.dataset.width + x]);
              (bbox.contains(x, y) ? inside : outside) += m;
            }
          ++successful;
          if (inside > outside) ++localized;
        }

        if (rendered < render_count) {
          char base[32];
          std::snprintf(base, sizeof(base), "inst_%06d", inst);
          counterfactual::render_difference_map(
              result.diff, d.dataset.width, d.dataset.height,
              outdir / (std::string(base) + "_diff.ppm"));
          data::write_pgm(outdir / (std::string(base) + "_x_cf.pgm"),
                          std::span(result.x_cf.data(), result.x_cf.size()),
                          d.dataset.width, d.dataset.height);
          data::write_pgm(outdir / (std::string(base) + "_x_tilde.pgm"),
                          std::span(result.x_tilde.data(),
                                    result.x_tilde.size()),
                          d.dataset.width, d.dataset.height);
          ++rendered;
        }
      }
      summary.push_back(
          {{"grid", g.key()},
           {"successful", successful},
           {"localized", localized},
           {"localized_fraction",
            successful > 0 ? static_cast<double>(localized) / successful
                           : 0.0}});
      outputs.push_back(("diffmaps" / fs::path(g.key())).string());
    }
    io::write_file_atomic(dir / "diffmap_summary.json", summary.dump(2) + "\n");
    outputs.push_back("diffmap_summary.json");
    write_manifest(cfg, dir, "diffmap", stage_seed(cfg, 0xD1FF, fold), outputs);
  }
}

}  // namespace

void run_stage(const std::string& name, const ExperimentConfig& config) {
  static const std::map<std::string,
                        std::function<void(const ExperimentConfig&)>>
      stages = {{"gen-data", run_gen_data},
                {"train-vae", run_train_vae},
                {"export-latents", run_export_latents},
                {"learn-spn", run_learn_spn},
                {"eval-clf", run_eval_clf},
                {"gen-cf", run_gen_cf},
                {"eval-cf", run_eval_cf},
                {"diffmap", run_diffmap}};
  const auto it = stages.find(name);
  if (it == stages.end()) throw ConfigError("unknown stage: " + name);
  try {
    it->second(config);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error("stage " + name + ": " + e.what());
  }
}

}  // namespace spncf::pipeline
