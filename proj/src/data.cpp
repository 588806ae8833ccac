#include "spncf/data.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "spncf/image_io.hpp"
#include "spncf/io_util.hpp"

namespace spncf::data {

using nlohmann::json;

int LabeledDataset::num_classes() const {
  int m = -1;
  for (int y : labels) m = std::max(m, y);
  return m + 1;
}

structlearn::LatentTable gen_latent_mixture(
    int n, int d, const std::vector<Eigen::VectorXd>& class_means,
    const std::vector<Eigen::MatrixXd>& class_covs, std::uint64_t seed) {
  if (class_means.empty() || class_means.size() != class_covs.size())
    throw InputError("gen_latent_mixture needs one mean and covariance per class");
  const int num_classes = static_cast<int>(class_means.size());

  std::vector<Eigen::MatrixXd> chol(num_classes);
  for (int k = 0; k < num_classes; ++k) {
    if (class_means[k].size() != d || class_covs[k].rows() != d ||
        class_covs[k].cols() != d)
      throw InputError("mixture component " + std::to_string(k) +
                       " has wrong dimensions");
    Eigen::LLT<Eigen::MatrixXd> llt(class_covs[k]);
    if (llt.info() != Eigen::Success)
      throw InputError("covariance of class " + std::to_string(k) +
                       " is not symmetric positive definite");
    chol[k] = llt.matrixL();
  }

  structlearn::LatentTable table;
  table.rows.resize(n, d);
  table.labels.resize(n);
  table.column_ids.resize(d);
  std::iota(table.column_ids.begin(), table.column_ids.end(), 0);

  Rng rng(seed);
  Eigen::VectorXd eps(d);
  for (int i = 0; i < n; ++i) {
    const int k = i % num_classes;
    for (int j = 0; j < d; ++j) eps[j] = rng.normal();
    table.rows.row(i) = (class_means[k] + chol[k] * eps).transpose();
    table.labels[i] = k;
  }
  return table;
}

namespace {

BBox bbox_of(const std::vector<std::uint8_t>& mask, int width, int height) {
  BBox b{width, height, -1, -1};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (mask[static_cast<std::size_t>(y) * width + x]) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
  return b;
}

std::vector<std::uint8_t> ellipse_mask(int side, double cx, double cy,
                                       double rx, double ry) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(side) * side, 0);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const double u = (x - cx) / rx;
      const double v = (y - cy) / ry;
      if (u * u + v * v <= 1.0) mask[static_cast<std::size_t>(y) * side + x] = 1;
    }
  return mask;
}

}  // namespace

LabeledDataset gen_ellipse_images(const EllipseParams& p) {
  if (p.side < 16) throw InputError("ellipse images require side >= 16");
  const auto& r0 = p.class_radii[0];
  const auto& r1 = p.class_radii[1];
  if (!(r1[0] > r0[0] && r1[1] > r0[1]))
    throw InputError("degenerate radii: class 1 must strictly dominate class 0");
  const double max_r = std::max(r1[0], r1[1]);
  if (max_r + p.jitter >= p.side / 2.0)
    throw InputError("ellipse with jitter does not fit inside the image");
  if (p.n <= 0 || p.group_size <= 0)
    throw InputError("n and group_size must be positive");

  LabeledDataset ds;
  ds.height = p.side;
  ds.width = p.side;
  ds.instances.resize(p.n, p.side * p.side);
  ds.labels.resize(p.n);
  ds.group_ids.resize(p.n);
  ds.masks.resize(p.n);
  ds.mask_bboxes.resize(p.n);
  ds.region_bboxes.resize(p.n);
  ds.generator_params = {
      {"generator", "ellipse"},
      {"n", p.n},
      {"side", p.side},
      {"class_radii", {{r0[0], r0[1]}, {r1[0], r1[1]}}},
      {"noise_sigma", p.noise_sigma},
      {"group_size", p.group_size},
      {"jitter", p.jitter},
      {"background", p.background},
      {"foreground", p.foreground},
      {"seed", p.seed},
  };

  const int num_groups = (p.n + p.group_size - 1) / p.group_size;
  Rng rng(p.seed);

  // Group jitters drawn up front so instance noise draws do not interleave
  // with them.
  std::vector<std::pair<double, double>> jitters(num_groups);
  for (auto& j : jitters) {
    j.first = (2.0 * rng.uniform() - 1.0) * p.jitter;
    j.second = (2.0 * rng.uniform() - 1.0) * p.jitter;
  }

  const double center = (p.side - 1) / 2.0;
  const int pixels = p.side * p.side;
  for (int i = 0; i < p.n; ++i) {
    const int g = i / p.group_size;
    const int label = g % 2;
    const double cx = center + jitters[g].first;
    const double cy = center + jitters[g].second;
    const auto& radii = p.class_radii[label];

    auto own = ellipse_mask(p.side, cx, cy, radii[0], radii[1]);
    // r1 dominates r0, so the union of both class shapes is the large one.
    const auto large = ellipse_mask(p.side, cx, cy, r1[0], r1[1]);
    ds.labels[i] = label;
    ds.group_ids[i] = g;
    ds.mask_bboxes[i] = bbox_of(own, p.side, p.side);
    ds.region_bboxes[i] = bbox_of(large, p.side, p.side);

    for (int px = 0; px < pixels; ++px) {
      double v = own[px] ? p.foreground : p.background;
      if (p.noise_sigma > 0.0) v += p.noise_sigma * rng.normal();
      ds.instances(i, px) = std::clamp(v, 0.0, 1.0);
    }
    ds.masks[i] = std::move(own);
  }
  return ds;
}

namespace {

// Largest-remainder apportionment of `total` into three parts.
std::array<int, 3> apportion(int total, double f_train, double f_val,
                             double f_test) {
  const double fs[3] = {f_train, f_val, f_test};
  std::array<int, 3> counts{};
  double rema[3];
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fs[i] * total;
    counts[i] = static_cast<int>(std::floor(exact));
    rema[i] = exact - counts[i];
    assigned += counts[i];
  }
  while (assigned < total) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rema[i] > rema[best]) best = i;
    ++counts[best];
    rema[best] = -1.0;
    ++assigned;
  }
  return counts;
}

}  // namespace

SplitIndices split(const LabeledDataset& dataset, const SplitSpec& spec) {
  if (!(spec.train > 0.0 && spec.val > 0.0 && spec.test > 0.0))
    throw InputError("split fractions must be positive");
  if (std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
    throw InputError("split fractions must sum to 1");

  SplitIndices out;
  Rng rng(spec.seed);
  if (spec.group_aware) {
    std::vector<int> groups(dataset.group_ids);
    std::sort(groups.begin(), groups.end());
    groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
    if (groups.size() < 3)
      throw InputError("group-aware split requires at least 3 distinct groups");
    rng.shuffle(groups);
    const auto counts = apportion(static_cast<int>(groups.size()), spec.train,
                                  spec.val, spec.test);
    std::vector<int> part_of_group;  // group -> partition
    const int max_gid = *std::max_element(groups.begin(), groups.end());
    part_of_group.assign(max_gid + 1, 0);
    int pos = 0;
    for (int part = 0; part < 3; ++part)
      for (int c = 0; c < counts[part]; ++c) part_of_group[groups[pos++]] = part;
    for (int i = 0; i < dataset.size(); ++i) {
      const int part = part_of_group[dataset.group_ids[i]];
      (part == 0 ? out.train : part == 1 ? out.val : out.test).push_back(i);
    }
  } else {
    std::vector<int> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    const auto counts = apportion(dataset.size(), spec.train, spec.val, spec.test);
    int pos = 0;
    for (int c = 0; c < counts[0]; ++c) out.train.push_back(idx[pos++]);
    for (int c = 0; c < counts[1]; ++c) out.val.push_back(idx[pos++]);
    for (int c = 0; c < counts[2]; ++c) out.test.push_back(idx[pos++]);
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
  }
  return out;
}

LabeledDataset subset(const LabeledDataset& dataset,
                      const std::vector<int>& indices) {
  LabeledDataset out;
  out.height = dataset.height;
  out.width = dataset.width;
  out.generator_params = dataset.generator_params;
  out.instances.resize(static_cast<int>(indices.size()), dataset.instances.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int i = indices[r];
    out.instances.row(static_cast<int>(r)) = dataset.instances.row(i);
    out.labels.push_back(dataset.labels[i]);
    out.group_ids.push_back(dataset.group_ids[i]);
    if (!dataset.masks.empty()) out.masks.push_back(dataset.masks[i]);
    if (!dataset.mask_bboxes.empty())
      out.mask_bboxes.push_back(dataset.mask_bboxes[i]);
    if (!dataset.region_bboxes.empty())
      out.region_bboxes.push_back(dataset.region_bboxes[i]);
  }
  return out;
}

namespace {

json bbox_to_json(const BBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

BBox bbox_from_json(const json& j) {
  return BBox{j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(),
              j.at(3).get<int>()};
}

}  // namespace

void save_dataset(const LabeledDataset& dataset,
                  const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "imgs");
  json instances = json::array();
  for (int i = 0; i < dataset.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "imgs/%06d.pgm", i);
    const Eigen::VectorXd row = dataset.instances.row(i);
    write_pgm(dir / name, std::span<const double>(row.data(), row.size()),
              dataset.width, dataset.height);
    json inst = {{"file", name},
                 {"label", dataset.labels[i]},
                 {"group_id", dataset.group_ids[i]}};
    if (!dataset.mask_bboxes.empty())
      inst["mask_bbox"] = bbox_to_json(dataset.mask_bboxes[i]);
    if (!dataset.region_bboxes.empty())
      inst["region_bbox"] = bbox_to_json(dataset.region_bboxes[i]);
    instances.push_back(std::move(inst));
  }
  json manifest = {{"version", 1},
                   {"height", dataset.height},
                   {"width", dataset.width},
                   {"generator_params", dataset.generator_params},
                   {"instances", std::move(instances)}};
  io::write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

LabeledDataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = io::read_json_file(dir / "manifest.json");
  if (manifest.value("version", 0) != 1)
    throw IoError("unsupported dataset manifest version");
  LabeledDataset ds;
  ds.height = manifest.at("height").get<int>();
  ds.width = manifest.at("width").get<int>();
  ds.generator_params = manifest.value("generator_params", json::object());
  const auto& instances = manifest.at("instances");
  ds.instances.resize(static_cast<int>(instances.size()), ds.height * ds.width);
  int i = 0;
  for (const auto& inst : instances) {
    int w = 0, h = 0;
    const auto pixels = read_pgm(dir / inst.at("file").get<std::string>(), &w, &h);
    if (w != ds.width || h != ds.height)
      throw IoError("image size mismatch in dataset directory");
    ds.instances.row(i) =
        Eigen::Map<const Eigen::VectorXd>(pixels.data(), pixels.size());
    ds.labels.push_back(inst.at("label").get<int>());
    ds.group_ids.push_back(inst.at("group_id").get<int>());
    if (inst.contains("mask_bbox"))
      ds.mask_bboxes.push_back(bbox_from_json(inst.at("mask_bbox")));
    if (inst.contains("region_bbox"))
      ds.region_bboxes.push_back(bbox_from_json(inst.at("region_bbox")));
    ++i;
  }
  return ds;
}

}  // namespace spncf::data
