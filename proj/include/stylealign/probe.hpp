#pragma once

// Linear probe from posterior-mean style codes onto the generating factors of
// the synthetic benchmark.

#include <Eigen/Dense>

#include <numeric>
#include <vector>

#include "stylealign/disentangler.hpp"
#include "stylealign/synth.hpp"

namespace stylealign {

using Matrix = Eigen::MatrixXd;

/// Out-of-sample R^2 per target column. An intercept is appended to x; the
/// fit uses the train rows and the score uses the test rows and test mean.
inline std::vector<double> r2_scores(const Matrix& train_x, const Matrix& train_y, const Matrix& test_x,
                                     const Matrix& test_y) {
  if (train_x.rows() != train_y.rows() || test_x.rows() != test_y.rows() || train_x.cols() != test_x.cols() ||
      train_y.cols() != test_y.cols())
    throw InvalidInput("probe matrices disagree in shape");
  if (train_x.rows() <= train_x.cols() + 1) throw InvalidInput("probe needs more train rows than features");
  if (test_x.rows() < 2) throw InvalidInput("probe needs at least two test rows");
  auto with_bias = [](const Matrix& x) {
    Matrix out(x.rows(), x.cols() + 1);
    out << x, Matrix::Ones(x.rows(), 1);
    return out;
  };
  const Matrix a = with_bias(train_x);
  const Matrix coef = a.colPivHouseholderQr().solve(train_y);
  const Matrix pred = with_bias(test_x) * coef;
  std::vector<double> out;
  for (Eigen::Index j = 0; j < test_y.cols(); ++j) {
    const double mean = test_y.col(j).mean();
    const double ss_tot = (test_y.col(j).array() - mean).square().sum();
    const double ss_res = (test_y.col(j) - pred.col(j)).squaredNorm();
    out.push_back(ss_tot > 0 ? 1.0 - ss_res / ss_tot : 0.0);
  }
  return out;
}

template <typename T>
Matrix style_codes(const Disentangler<T>& model, const Dataset& dataset) {
  Matrix out(static_cast<Eigen::Index>(dataset.size()), model.config().style_dim);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto ns = prepare_sample<T>(dataset[i], model.config());
    const auto q = model.encode_style(ns.image, ns.heatmaps);
    for (int d = 0; d < model.config().style_dim; ++d) out(static_cast<Eigen::Index>(i), d) = q.mu[d];
  }
  return out;
}

struct ProbeResult {
  std::vector<double> style_r2;      // one per StyleFactors column
  std::vector<double> structure_r2;  // one per StructureFactors column
  double style_mean = 0;
  double structure_mean = 0;
};

template <std::size_t N, typename F>
Matrix factor_matrix(const std::vector<SynthFactors>& factors, F&& get) {
  Matrix out(static_cast<Eigen::Index>(factors.size()), static_cast<Eigen::Index>(N));
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const std::array<double, N> v = get(factors[i]);
    for (std::size_t j = 0; j < N; ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
  }
  return out;
}

template <typename T>
ProbeResult probe_disentanglement(const Disentangler<T>& model, const Dataset& train,
                                  const std::vector<SynthFactors>& train_factors, const Dataset& test,
                                  const std::vector<SynthFactors>& test_factors) {
  if (train.size() != train_factors.size() || test.size() != test_factors.size())
    throw InvalidInput("probe factors do not match the datasets");
  const Matrix ztr = style_codes(model, train), zte = style_codes(model, test);
  auto style = [](const SynthFactors& f) { return f.style.values(); };
  auto structure = [](const SynthFactors& f) { return f.structure.values(); };
  ProbeResult r;
  r.style_r2 = r2_scores(ztr, factor_matrix<10>(train_factors, style), zte, factor_matrix<10>(test_factors, style));
  r.structure_r2 =
      r2_scores(ztr, factor_matrix<8>(train_factors, structure), zte, factor_matrix<8>(test_factors, structure));
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
  r.style_mean = mean(r.style_r2);
  r.structure_mean = mean(r.structure_r2);
  return r;
}

}  // namespace stylealign
