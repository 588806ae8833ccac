#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <vector>

#include "spncf/common.hpp"
#include "spncf/structlearn.hpp"

namespace spncf::data {

struct BBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive pixel bounds

  bool contains(int x, int y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
  int area() const { return (x1 - x0 + 1) * (y1 - y0 + 1); }
};

// Flat instances in [0,1] with a recorded 2-D shape, labels, and group ids
// (the patient-identifier analog). Generator metadata carries ground-truth
// masks so localization claims are testable.
struct LabeledDataset {
  Eigen::MatrixXd instances;  // n x (height*width), row-major pixels
  int height = 0;
  int width = 0;
  std::vector<int> labels;
  std::vector<int> group_ids;

  // Per-instance ground truth, populated by generators that have one.
  std::vector<std::vector<std::uint8_t>> masks;  // own-class ellipse mask
  std::vector<BBox> mask_bboxes;                 // bbox of the own-class mask
  std::vector<BBox> region_bboxes;  // bbox of the union of all class shapes
  nlohmann::json generator_params;

  int size() const { return static_cast<int>(instances.rows()); }
  int pixels() const { return height * width; }
  int num_classes() const;
};

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;
  bool group_aware = true;
};

struct SplitIndices {
  std::vector<int> train, val, test;
};

// Deterministic Gaussian-mixture latent sample with one mixture component
// per class. Covariances must be SPD.
structlearn::LatentTable gen_latent_mixture(
    int n, int d, const std::vector<Eigen::VectorXd>& class_means,
    const std::vector<Eigen::MatrixXd>& class_covs, std::uint64_t seed);

struct EllipseParams {
  int n = 2000;
  int side = 32;
  // Per class {rx, ry} in pixels; class 1 must dominate class 0 so the
  // larger-shape class is well defined.
  std::array<std::array<double, 2>, 2> class_radii{{{5.0, 4.0}, {9.0, 7.0}}};
  double noise_sigma = 0.05;
  int group_size = 4;     // instances sharing one group id / jitter
  double jitter = 2.0;    // max |center offset| in pixels
  double background = 0.15;
  double foreground = 0.85;
  std::uint64_t seed = 0;
};

// Centered filled ellipse whose radii depend on the class, jittered per
// group, with additive clipped Gaussian noise. Classes are balanced 50/50.
LabeledDataset gen_ellipse_images(const EllipseParams& params);

SplitIndices split(const LabeledDataset& dataset, const SplitSpec& spec);

LabeledDataset subset(const LabeledDataset& dataset,
                      const std::vector<int>& indices);

// Directory layout: manifest.json plus imgs/NNNNNN.pgm.
void save_dataset(const LabeledDataset& dataset,
                  const std::filesystem::path& dir);
LabeledDataset load_dataset(const std::filesystem::path& dir);

}  // namespace spncf::data
