#include "spncf/structlearn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <sstream>

#include "spncf/io_util.hpp"

namespace spncf::structlearn {

using circuit::CircuitGraph;
using circuit::NodeId;

int LatentTable::num_classes() const {
  int m = -1;
  for (int y : labels) m = std::max(m, y);
  return m + 1;
}

std::vector<std::vector<int>> independence_components(
    const Eigen::MatrixXd& data, double threshold) {
  const int m = static_cast<int>(data.cols());
  const int n = static_cast<int>(data.rows());
  std::vector<int> parent(m);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };

  Eigen::VectorXd mean = data.colwise().mean();
  Eigen::VectorXd sd(m);
  for (int j = 0; j < m; ++j)
    sd[j] = std::sqrt((data.col(j).array() - mean[j]).square().sum() / n);

  for (int i = 0; i < m; ++i) {
    if (sd[i] == 0.0) continue;  // constant column: no edges
    for (int j = i + 1; j < m; ++j) {
      if (sd[j] == 0.0) continue;
      const double cov = ((data.col(i).array() - mean[i]) *
                          (data.col(j).array() - mean[j]))
                             .sum() /
                         n;
      const double r = cov / (sd[i] * sd[j]);
      if (std::isfinite(r) && std::abs(r) >= threshold)
        parent[find(i)] = find(j);
    }
  }

  std::vector<std::vector<int>> by_root(m);
  for (int j = 0; j < m; ++j) by_root[find(j)].push_back(j);
  std::vector<std::vector<int>> components;
  for (auto& c : by_root)
    if (!c.empty()) components.push_back(std::move(c));
  // members are pushed in ascending order, so each component is sorted;
  // union-find roots are arbitrary, so order components by smallest member
  std::sort(components.begin(), components.end(),
            [](const auto& a, const auto& b) { return a[0] < b[0]; });
  return components;
}

Clustering cluster_rows(const Eigen::MatrixXd& data, int k,
                        std::uint64_t seed) {
  const int n = static_cast<int>(data.rows());
  if (k < 1) throw LearnError("cluster_rows requires k >= 1");
  Clustering out;
  out.assignment.resize(n);
  out.proportions.assign(k, 0.0);
  if (n == 0) return out;
  if (n <= k) {
    for (int i = 0; i < n; ++i) {
      out.assignment[i] = i;
      out.proportions[i] = 1.0 / n;
    }
    return out;
  }

  Rng rng(seed);
  Eigen::MatrixXd centers(k, data.cols());
  centers.row(0) = data.row(static_cast<int>(rng.index(n)));
  Eigen::VectorXd d2 =
      (data.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    int pick;
    if (total <= 0.0) {
      pick = static_cast<int>(rng.index(n));
    } else {
      double u = rng.uniform() * total;
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        u -= d2[i];
        if (u <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.row(c) = data.row(pick);
    d2 = d2.cwiseMin(
        (data.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> counts(k);
  for (int iter = 0; iter < 100; ++iter) {
    std::fill(counts.begin(), counts.end(), 0);
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = (data.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (data.row(i) - centers.row(c)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      out.assignment[i] = best;
      ++counts[best];
    }
    // an empty cluster steals the point farthest from its current center
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) continue;
      int far = -1;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        if (counts[out.assignment[i]] <= 1) continue;
        const double d =
            (data.row(i) - centers.row(out.assignment[i])).squaredNorm();
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      if (far < 0) break;
      --counts[out.assignment[far]];
      out.assignment[far] = c;
      ++counts[c];
    }

    double moved = 0.0;
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(data.cols());
      for (int i = 0; i < n; ++i)
        if (out.assignment[i] == c) mu += data.row(i);
      mu /= counts[c];
      moved = std::max(moved, (mu - centers.row(c)).norm());
      centers.row(c) = mu;
    }
    if (moved < 1e-6) break;
  }

  std::fill(counts.begin(), counts.end(), 0);
  for (int a : out.assignment) ++counts[a];
  for (int c = 0; c < k; ++c)
    out.proportions[c] = static_cast<double>(counts[c]) / n;
  return out;
}

namespace {

struct Builder {
  const LatentTable& table;
  const LearnConfig& cfg;
  CircuitGraph graph;
  std::uint64_t cluster_calls = 0;

  NodeId fit_leaf(const std::vector<int>& rows, int col) {
    double mean = 0.0;
    for (int r : rows) mean += table.rows(r, col);
    mean /= static_cast<double>(rows.size());
    double var = 0.0;
    for (int r : rows) {
      const double d = table.rows(r, col) - mean;
      var += d * d;
    }
    var /= static_cast<double>(rows.size());
    const double sd = std::max(std::sqrt(var), cfg.sigma_floor);
    return graph.add_leaf(table.column_ids[col], mean, sd);
  }

  NodeId factorized(const std::vector<int>& rows, const std::vector<int>& cols) {
    if (cols.size() == 1) return fit_leaf(rows, cols[0]);
    std::vector<NodeId> leaves;
    leaves.reserve(cols.size());
    for (int c : cols) leaves.push_back(fit_leaf(rows, c));
    return graph.add_product(std::move(leaves));
  }

  NodeId build(const std::vector<int>& rows, const std::vector<int>& cols) {
    if (cols.size() == 1) return fit_leaf(rows, cols[0]);
    if (static_cast<int>(rows.size()) < cfg.min_instances)
      return factorized(rows, cols);

    Eigen::MatrixXd sub(rows.size(), cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < cols.size(); ++j)
        sub(static_cast<int>(i), static_cast<int>(j)) =
            table.rows(rows[i], cols[j]);

    const auto comps = independence_components(sub, cfg.independence_threshold);
    if (comps.size() > 1) {
      std::vector<NodeId> children;
      children.reserve(comps.size());
      for (const auto& comp : comps) {
        std::vector<int> comp_cols;
        comp_cols.reserve(comp.size());
        for (int j : comp) comp_cols.push_back(cols[j]);
        children.push_back(build(rows, comp_cols));
      }
      return graph.add_product(std::move(children));
    }

    const std::uint64_t call_seed =
        splitmix64(cfg.seed ^ (0x9e3779b97f4a7c15ULL * ++cluster_calls));
    const auto clustering = cluster_rows(sub, cfg.num_row_clusters, call_seed);
    std::vector<std::vector<int>> groups(cfg.num_row_clusters);
    for (std::size_t i = 0; i < rows.size(); ++i)
      groups[clustering.assignment[i]].push_back(rows[i]);
    std::vector<std::vector<int>> nonempty;
    for (auto& g : groups)
      if (!g.empty()) nonempty.push_back(std::move(g));
    // degenerate clustering: no progress possible, factorize instead
    if (nonempty.size() < 2) return factorized(rows, cols);

    std::vector<NodeId> children;
    std::vector<double> weights;
    for (const auto& g : nonempty) {
      children.push_back(build(g, cols));
      weights.push_back(static_cast<double>(g.size()) /
                        static_cast<double>(rows.size()));
    }
    return graph.add_sum(std::move(children), std::move(weights));
  }
};

}  // namespace

circuit::Circuit learn_spn(const LatentTable& table, const LearnConfig& config) {
  const int n = static_cast<int>(table.rows.rows());
  const int d = static_cast<int>(table.rows.cols());
  if (n == 0 || d == 0) throw LearnError("latent table is empty");
  if (static_cast<int>(table.labels.size()) != n)
    throw LearnError("label count does not match row count");
  if (config.min_instances < 1 || config.num_row_clusters < 2)
    throw LearnError("min_instances must be >= 1 and num_row_clusters >= 2");
  if (!(config.independence_threshold >= 0.0 &&
        config.independence_threshold <= 1.0))
    throw LearnError("independence_threshold must lie in [0, 1]");
  if (config.sigma_floor < circuit::kSigmaFloor)
    throw LearnError("sigma_floor below the circuit floor");
  if (static_cast<int>(table.column_ids.size()) != d)
    throw LearnError("column_ids does not match column count");
  {
    std::vector<int> ids(table.column_ids);
    std::sort(ids.begin(), ids.end());
    for (int j = 0; j < d; ++j)
      if (ids[j] != j)
        throw LearnError("column_ids must be a permutation of 0..d-1");
  }
  for (int y : table.labels)
    if (y < 0) throw LearnError("negative class label");
  const int num_classes = table.num_classes();

  std::vector<std::vector<int>> class_rows(num_classes);
  for (int i = 0; i < n; ++i) class_rows[table.labels[i]].push_back(i);
  for (int k = 0; k < num_classes; ++k)
    if (class_rows[k].empty())
      throw LearnError("class " + std::to_string(k) + " has no instances");

  Builder b{table, config, {}, 0};
  b.graph.dimension = d;
  std::vector<int> all_cols(d);
  std::iota(all_cols.begin(), all_cols.end(), 0);

  std::vector<NodeId> children;
  std::vector<double> priors;
  for (int k = 0; k < num_classes; ++k) {
    children.push_back(b.build(class_rows[k], all_cols));
    priors.push_back(static_cast<double>(class_rows[k].size()) / n);
  }
  b.graph.root = b.graph.add_sum(std::move(children), std::move(priors));
  b.graph.classed = true;
  return circuit::Circuit::compile(std::move(b.graph));
}

void save_latent_csv(const LatentTable& table, const std::vector<int>& group_ids,
                     const std::filesystem::path& path) {
  const int n = static_cast<int>(table.rows.rows());
  const int d = static_cast<int>(table.rows.cols());
  if (!group_ids.empty() && static_cast<int>(group_ids.size()) != n)
    throw InputError("group_ids must be empty or match row count");
  std::string out;
  for (int j = 0; j < d; ++j) {
    out += 'z';
    out += std::to_string(j);
    out += ',';
  }
  out += "label,group_id\n";
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      out += io::format_double(table.rows(i, j));
      out += ',';
    }
    out += std::to_string(table.labels[i]);
    out += ',';
    out += std::to_string(group_ids.empty() ? 0 : group_ids[i]);
    out += '\n';
  }
  io::write_file_atomic(path, out);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

LatentCsv load_latent_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty latent csv: " + path.string());
  const auto header = split_csv_line(line);

  int d = 0;
  while (d < static_cast<int>(header.size()) &&
         header[d] == "z" + std::to_string(d))
    ++d;
  if (d == 0) throw IoError("latent csv header must start with z0");
  int label_col = -1, group_col = -1;
  for (int j = d; j < static_cast<int>(header.size()); ++j) {
    if (header[j] == "label") label_col = j;
    else if (header[j] == "group_id") group_col = j;
    else throw IoError("unexpected latent csv column: " + header[j]);
  }
  if (label_col < 0) throw IoError("latent csv is missing the label column");

  LatentCsv out;
  out.table.column_ids.resize(d);
  std::iota(out.table.column_ids.begin(), out.table.column_ids.end(), 0);

  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw IoError("latent csv row has " + std::to_string(fields.size()) +
                    " fields, expected " + std::to_string(header.size()));
    std::vector<double> row(d);
    for (int j = 0; j < d; ++j) {
      char* end = nullptr;
      row[j] = std::strtod(fields[j].c_str(), &end);
      if (end == fields[j].c_str() || *end != '\0')
        throw IoError("bad number in latent csv: " + fields[j]);
    }
    rows.push_back(std::move(row));
    out.table.labels.push_back(std::stoi(fields[label_col]));
    out.group_ids.push_back(group_col >= 0 ? std::stoi(fields[group_col]) : 0);
  }
  out.table.rows.resize(static_cast<int>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < d; ++j)
      out.table.rows(static_cast<int>(i), j) = rows[i][j];
  return out;
}

}  // namespace spncf::structlearn
