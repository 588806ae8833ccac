#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "spncf/common.hpp"

namespace spncf::metrics {

// Flip rate: mean of [original != cf].
double validity(const std::vector<int>& original_preds,
                const std::vector<int>& cf_preds);

// Euclidean norm of the flattened difference.
double proximity_l2(std::span<const double> x, std::span<const double> x_cf);

// PaperLiteral omits the matrix square root (and can go negative); Standard
// is the usual Frechet distance between the fitted Gaussians.
enum class FrechetMode { PaperLiteral, Standard };

// Rows are embedding vectors; covariance uses 1/(n-1) plus 1e-6 diagonal
// jitter. Requires >= 2 rows per set.
double frechet(const Eigen::MatrixXd& embed_org, const Eigen::MatrixXd& embed_cf,
               FrechetMode mode);

struct ClassifierStats {
  double accuracy = 0.0;
  double mean_entropy = 0.0;  // Shannon, nats
  double auc = 0.0;           // Mann-Whitney with midrank tie correction
  double precision = 0.0;     // class 1
  double recall = 0.0;        // class 1
};

// posteriors: one row per instance, rows sum to 1; labels binary {0,1} with
// both classes present (AUC is undefined otherwise).
ClassifierStats classifier_stats(const Eigen::MatrixXd& posteriors,
                                 const std::vector<int>& labels);

struct MetricsReport {
  // configuration key
  double beta1 = 0.0;
  std::string classifier;  // "spn" | "mlp"
  double beta = 0.0;
  double gamma = 0.0;
  // counterfactual metrics
  double validity_latent = 0.0;
  double validity_pipeline = 0.0;
  double mean_l2 = 0.0;
  double frechet_paper = 0.0;
  double frechet_standard = 0.0;
  double mean_switch_epoch = 0.0;  // NaN when no replicate ever flipped
};

// Table-shaped emission; columns exactly (beta1, classifier, beta, gamma,
// validity_latent, validity_pipeline, l2, frechet_standard, frechet_paper,
// switch_epoch), sorted by (beta1 desc, classifier, beta, gamma).
std::string report_csv(std::vector<MetricsReport> reports);
std::string report_table(std::vector<MetricsReport> reports);

}  // namespace spncf::metrics
