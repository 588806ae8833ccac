#include "spncf/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace spncf::metrics {

double validity(const std::vector<int>& original_preds,
                const std::vector<int>& cf_preds) {
  if (original_preds.empty()) throw MetricError("validity: empty input");
  if (original_preds.size() != cf_preds.size())
    throw MetricError("validity: prediction lists differ in length");
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < original_preds.size(); ++i)
    if (original_preds[i] != cf_preds[i]) ++flipped;
  return static_cast<double>(flipped) / original_preds.size();
}

double proximity_l2(std::span<const double> x, std::span<const double> x_cf) {
  if (x.size() != x_cf.size()) throw InputError("proximity_l2: shapes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - x_cf[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

namespace {

void fit_gaussian(const Eigen::MatrixXd& rows, Eigen::VectorXd& mean,
                  Eigen::MatrixXd& cov) {
  const long n = rows.rows();
  mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - mean.transpose();
  cov = centered.transpose() * centered / static_cast<double>(n - 1);
  cov.diagonal().array() += 1e-6;
}

// Trace of the principal square root of a symmetric PSD matrix; negative
// eigenvalues from roundoff are clamped to zero.
double trace_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  return eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

Eigen::MatrixXd matrix_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  return eig.eigenvectors() *
         eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

double frechet(const Eigen::MatrixXd& embed_org, const Eigen::MatrixXd& embed_cf,
               FrechetMode mode) {
  if (embed_org.rows() < 2 || embed_cf.rows() < 2)
    throw MetricError("frechet needs at least 2 vectors per set");
  if (embed_org.cols() != embed_cf.cols())
    throw InputError("frechet: embedding dimensions differ");

  Eigen::VectorXd mu_o, mu_c;
  Eigen::MatrixXd sig_o, sig_c;
  fit_gaussian(embed_org, mu_o, sig_o);
  fit_gaussian(embed_cf, mu_c, sig_c);

  const double mean_term = (mu_o - mu_c).squaredNorm();
  if (mode == FrechetMode::PaperLiteral)
    return mean_term + sig_o.trace() + sig_c.trace() -
           2.0 * (sig_o * sig_c).trace();

  const Eigen::MatrixXd a = matrix_sqrt(sig_o);
  const double cross = trace_sqrt(a * sig_c * a);
  return std::max(0.0, mean_term + sig_o.trace() + sig_c.trace() - 2.0 * cross);
}

ClassifierStats classifier_stats(const Eigen::MatrixXd& posteriors,
                                 const std::vector<int>& labels) {
  const long n = posteriors.rows();
  if (n == 0) throw MetricError("classifier_stats: empty input");
  if (static_cast<long>(labels.size()) != n)
    throw MetricError("classifier_stats: label count mismatch");
  if (posteriors.cols() < 2)
    throw MetricError("classifier_stats needs at least 2 classes");
  for (long r = 0; r < n; ++r) {
    if (std::abs(posteriors.row(r).sum() - 1.0) > 1e-6)
      throw InputError("posterior row " + std::to_string(r) +
                       " does not sum to 1");
    if (labels[r] != 0 && labels[r] != 1)
      throw MetricError("classifier_stats expects binary labels");
  }
  long n1 = std::count(labels.begin(), labels.end(), 1);
  long n0 = n - n1;
  if (n0 == 0 || n1 == 0)
    throw MetricError("AUC undefined: labels contain a single class");

  ClassifierStats s;
  long correct = 0, tp = 0, fp = 0, fn = 0;
  for (long r = 0; r < n; ++r) {
    int pred = 0;
    for (int k = 1; k < posteriors.cols(); ++k)
      if (posteriors(r, k) > posteriors(r, pred)) pred = k;
    if (pred == labels[r]) ++correct;
    if (pred == 1 && labels[r] == 1) ++tp;
    if (pred == 1 && labels[r] == 0) ++fp;
    if (pred != 1 && labels[r] == 1) ++fn;
    for (int k = 0; k < posteriors.cols(); ++k) {
      const double p = posteriors(r, k);
      if (p > 0.0) s.mean_entropy -= p * std::log(p);
    }
  }
  s.accuracy = static_cast<double>(correct) / n;
  s.mean_entropy /= n;
  s.precision = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  s.recall = static_cast<double>(tp) / (tp + fn);

  // Mann-Whitney via midranks of the class-1 score
  std::vector<long> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](long a, long b) {
    return posteriors(a, 1) < posteriors(b, 1);
  });
  std::vector<double> rank(n);
  long i = 0;
  while (i < n) {
    long j = i;
    while (j + 1 < n && posteriors(idx[j + 1], 1) == posteriors(idx[i], 1)) ++j;
    const double mid = (i + j) / 2.0 + 1.0;  // 1-based midrank
    for (long k = i; k <= j; ++k) rank[idx[k]] = mid;
    i = j + 1;
  }
  double rank_sum_1 = 0.0;
  for (long r = 0; r < n; ++r)
    if (labels[r] == 1) rank_sum_1 += rank[r];
  s.auc = (rank_sum_1 - n1 * (n1 + 1) / 2.0) /
          (static_cast<double>(n0) * static_cast<double>(n1));
  return s;
}

namespace {

void sort_reports(std::vector<MetricsReport>& reports) {
  std::stable_sort(reports.begin(), reports.end(),
                   [](const MetricsReport& a, const MetricsReport& b) {
                     if (a.beta1 != b.beta1) return a.beta1 > b.beta1;
                     if (a.classifier != b.classifier)
                       return a.classifier < b.classifier;
                     if (a.beta != b.beta) return a.beta < b.beta;
                     return a.gamma < b.gamma;
                   });
}

std::string num6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::vector<std::vector<std::string>> report_cells(
    const std::vector<MetricsReport>& reports) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"beta1", "classifier", "beta", "gamma", "validity_latent",
                  "validity_pipeline", "l2", "frechet_standard",
                  "frechet_paper", "switch_epoch"});
  for (const auto& r : reports)
    rows.push_back({num6(r.beta1), r.classifier, num6(r.beta), num6(r.gamma),
                    num6(r.validity_latent), num6(r.validity_pipeline),
                    num6(r.mean_l2), num6(r.frechet_standard),
                    num6(r.frechet_paper), num6(r.mean_switch_epoch)});
  return rows;
}

}  // namespace

std::string report_csv(std::vector<MetricsReport> reports) {
  sort_reports(reports);
  std::string out;
  for (const auto& row : report_cells(reports)) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      out += row[c];
    }
    out += '\n';
  }
  return out;
}

std::string report_table(std::vector<MetricsReport> reports) {
  sort_reports(reports);
  const auto rows = report_cells(reports);
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c)
      width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += "  ";
      out += row[c];
      out.append(width[c] - row[c].size(), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
  }
  return out;
}

}  // namespace spncf::metrics
