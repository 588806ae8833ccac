#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "spncf/circuit.hpp"

namespace spncf::structlearn {

// Latent codes with class labels. column_ids map matrix columns back to
// original latent-dimension indices and must form a permutation of 0..d-1
// for the learned circuit to cover every variable.
struct LatentTable {
  Eigen::MatrixXd rows;  // n x d
  std::vector<int> labels;
  std::vector<int> column_ids;

  int num_classes() const;
};

struct LearnConfig {
  double independence_threshold = 0.3;  // on |Pearson correlation|
  int min_instances = 30;
  int num_row_clusters = 2;
  std::uint64_t seed = 0;
  double sigma_floor = 1e-3;
};

// LearnSPN-style recursion: class split once at the root, then alternating
// variable splits (correlation-thresholded connected components) and
// instance splits (seeded k-means). Produces a validated circuit.
circuit::Circuit learn_spn(const LatentTable& table, const LearnConfig& config);

// Columns i,j are connected iff |pearson(i,j)| >= threshold; returns the
// connected components, each sorted, ordered by smallest member. Constant
// columns are independent of everything.
std::vector<std::vector<int>> independence_components(
    const Eigen::MatrixXd& data, double threshold);

struct Clustering {
  std::vector<int> assignment;     // row -> cluster, -1 never occurs
  std::vector<double> proportions; // sums to 1; clusters may be empty
};

// Seeded k-means++ with Lloyd iterations (<=100 or centroid movement
// < 1e-6). Empty clusters are re-seeded once from the farthest point.
Clustering cluster_rows(const Eigen::MatrixXd& data, int k,
                        std::uint64_t seed);

// CSV with header z0..z{d-1},label,group_id (group column optional on read).
struct LatentCsv {
  LatentTable table;
  std::vector<int> group_ids;
};
LatentCsv load_latent_csv(const std::filesystem::path& path);
void save_latent_csv(const LatentTable& table,
                     const std::vector<int>& group_ids,
                     const std::filesystem::path& path);

}  // namespace spncf::structlearn
