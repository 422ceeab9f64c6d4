#include "cw3/diagnostics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "cw3/cycle.hpp"

namespace cw3 {

std::string report_to_csv(const DiagnosticReport& report) {
  std::ostringstream out;
  out << "metric,value\n";
  char buf[64];
  auto put = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << key << "," << buf << "\n";
  };
  put("diag_adjacent", report.diag_adjacent);
  put("diag_unrelated", report.diag_unrelated);
  put("probe_r2_x", report.probe_r2_x);
  put("probe_r2_y", report.probe_r2_y);
  out << "adjacent_pairs," << report.adjacent_pairs << "\n";
  out << "unrelated_pairs," << report.unrelated_pairs << "\n";
  out << "probe_maps," << report.probe_maps << "\n";
  return out.str();
}

DiagnosticReport report_from_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != "metric,value")
    throw std::invalid_argument("report_from_csv: bad header");
  DiagnosticReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::invalid_argument("report_from_csv: bad row: " + line);
    const std::string key = line.substr(0, comma);
    const double v = std::strtod(line.c_str() + comma + 1, nullptr);
    if (key == "diag_adjacent")
      report.diag_adjacent = v;
    else if (key == "diag_unrelated")
      report.diag_unrelated = v;
    else if (key == "probe_r2_x")
      report.probe_r2_x = v;
    else if (key == "probe_r2_y")
      report.probe_r2_y = v;
    else if (key == "adjacent_pairs")
      report.adjacent_pairs = static_cast<int64_t>(v);
    else if (key == "unrelated_pairs")
      report.unrelated_pairs = static_cast<int64_t>(v);
    else if (key == "probe_maps")
      report.probe_maps = static_cast<int64_t>(v);
    else
      throw std::invalid_argument("report_from_csv: unknown metric " + key);
  }
  return report;
}

double diagonality(const Tensor& a) {
  if (a.rank() != 2 || a.shape()[0] != a.shape()[1])
    throw std::invalid_argument("diagonality: square matrix required");
  const int64_t n = a.shape()[0];
  double sum = 0;
  for (int64_t i = 0; i < n; ++i) sum += a.at(i * n + i);
  return sum / static_cast<double>(n);
}

namespace {

// Node coordinates normalized to [-1,1] per axis (0 when the axis is a
// single node), matching the sampling-grid convention.
void normalized_coords(int64_t rows, int64_t cols, std::vector<double>& xs,
                       std::vector<double>& ys) {
  xs.resize(static_cast<size_t>(rows * cols));
  ys.resize(static_cast<size_t>(rows * cols));
  for (int64_t y = 0; y < rows; ++y)
    for (int64_t x = 0; x < cols; ++x) {
      const size_t i = static_cast<size_t>(y * cols + x);
      xs[i] = cols > 1 ? 2.0 * static_cast<double>(x) / (cols - 1) - 1.0 : 0.0;
      ys[i] = rows > 1 ? 2.0 * static_cast<double>(y) / (rows - 1) - 1.0 : 0.0;
    }
}

}  // namespace

ProbeR2 position_probe(const std::vector<FeatureMap>& features, double lambda) {
  if (lambda <= 0) throw std::invalid_argument("position_probe: lambda > 0");
  if (features.size() < 2)
    throw std::invalid_argument("position_probe: >= 2 feature maps required");
  const int64_t rows = features[0].rows(), cols = features[0].cols();
  const int64_t dim = features[0].channels();
  for (const auto& f : features)
    if (f.rows() != rows || f.cols() != cols || f.channels() != dim)
      throw std::invalid_argument("position_probe: inconsistent feature grids");

  const size_t train_maps = (features.size() + 1) / 2;
  const int64_t nodes = rows * cols;
  std::vector<double> xs, ys;
  normalized_coords(rows, cols, xs, ys);

  auto fill = [&](size_t lo, size_t hi, Eigen::MatrixXd& x, Eigen::MatrixXd& t) {
    const int64_t n = static_cast<int64_t>(hi - lo) * nodes;
    x.resize(n, dim);
    t.resize(n, 2);
    int64_t row = 0;
    for (size_t f = lo; f < hi; ++f) {
      const auto v = features[f].data.to_doubles();
      for (int64_t node = 0; node < nodes; ++node, ++row) {
        for (int64_t c = 0; c < dim; ++c)
          x(row, c) = v[static_cast<size_t>(node * dim + c)];
        t(row, 0) = xs[static_cast<size_t>(node)];
        t(row, 1) = ys[static_cast<size_t>(node)];
      }
    }
  };

  Eigen::MatrixXd xtr, ttr, xte, tte;
  fill(0, train_maps, xtr, ttr);
  fill(train_maps, features.size(), xte, tte);

  const Eigen::RowVectorXd x_mean = xtr.colwise().mean();
  const Eigen::RowVectorXd t_mean = ttr.colwise().mean();
  const Eigen::MatrixXd xc = xtr.rowwise() - x_mean;
  const Eigen::MatrixXd tc = ttr.rowwise() - t_mean;
  Eigen::MatrixXd gram = xc.transpose() * xc;
  gram.diagonal().array() += lambda;
  const Eigen::MatrixXd w = gram.ldlt().solve(xc.transpose() * tc);

  const Eigen::MatrixXd pred =
      ((xte.rowwise() - x_mean) * w).rowwise() + t_mean;
  ProbeR2 r2;
  for (int coord = 0; coord < 2; ++coord) {
    const double mean = tte.col(coord).mean();
    const double ss_tot = (tte.col(coord).array() - mean).square().sum();
    const double ss_res =
        (tte.col(coord).array() - pred.col(coord).array()).square().sum();
    const double value = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0;
    (coord == 0 ? r2.x : r2.y) = value;
  }
  return r2;
}

Tensor pca_rgb(const FeatureMap& feature) {
  const int64_t nodes = feature.nodes(), dim = feature.channels();
  if (dim < 3) throw std::invalid_argument("pca_rgb: >= 3 channels required");
  const auto v = feature.data.to_doubles();
  Eigen::MatrixXd x(nodes, dim);
  for (int64_t n = 0; n < nodes; ++n)
    for (int64_t c = 0; c < dim; ++c)
      x(n, c) = v[static_cast<size_t>(n * dim + c)];
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov =
      (x.transpose() * x) / std::max<int64_t>(1, nodes - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("pca_rgb: eigendecomposition failed");
  // Eigenvalues ascend; take the top three columns in descending order.
  const double top = eig.eigenvalues()(dim - 1);
  const double tol = std::max(top, 0.0) * 1e-9 + 1e-30;

  Tensor out = Tensor::zeros({3, feature.rows(), feature.cols()}, Dtype::kF64);
  for (int comp = 0; comp < 3; ++comp) {
    const int64_t col = dim - 1 - comp;
    if (eig.eigenvalues()(col) <= tol) {
      std::cerr << "pca_rgb: covariance rank < 3, padding component "
                << comp + 1 << " with zeros\n";
      continue;
    }
    const Eigen::VectorXd proj = x * eig.eigenvectors().col(col);
    const double lo = proj.minCoeff(), hi = proj.maxCoeff();
    for (int64_t n = 0; n < nodes; ++n) {
      const double scaled = hi - lo > 0 ? (proj(n) - lo) / (hi - lo) : 0.0;
      out.set(comp * nodes + n, scaled);
    }
  }
  return out;
}

DiagnosticReport affinity_pair_report(const EncoderWeights& weights,
                                      const EncoderConfig& config,
                                      const std::vector<FramePair>& pairs,
                                      double tau, bool use_head) {
  DiagnosticReport report;
  for (const auto& pair : pairs) {
    Tensor fa = encode_frame(pair.a, weights, config, use_head);
    Tensor fb = encode_frame(pair.b, weights, config, use_head);
    const double d = diagonality(affinity(fa, fb, tau));
    if (pair.adjacent) {
      report.diag_adjacent += d;
      ++report.adjacent_pairs;
    } else {
      report.diag_unrelated += d;
      ++report.unrelated_pairs;
    }
  }
  if (report.adjacent_pairs > 0)
    report.diag_adjacent /= static_cast<double>(report.adjacent_pairs);
  if (report.unrelated_pairs > 0)
    report.diag_unrelated /= static_cast<double>(report.unrelated_pairs);
  return report;
}

}  // namespace cw3
