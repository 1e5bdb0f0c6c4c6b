#include "ldistill/datagen.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <string>

#include "ldistill/error.hpp"

namespace ldistill {

namespace {

void check_label(const GmmSpec& spec, int y) {
  if (y < 1 || static_cast<std::size_t>(y) > spec.classes()) {
    fail(ErrorKind::InvalidArgument,
         "label " + std::to_string(y) + " outside [1, " + std::to_string(spec.classes()) + "]");
  }
}

double det2(const Mat2& m) { return m[0] * m[3] - m[1] * m[2]; }

double component_log_density(const Vec2& mean, const Mat2& cov, const Vec2& x) {
  const double det = det2(cov);
  const double dx = x[0] - mean[0];
  const double dy = x[1] - mean[1];
  // (x-mu)^T C^-1 (x-mu) with C^-1 = adj(C) / det
  const double quad = (cov[3] * dx * dx - (cov[1] + cov[2]) * dx * dy + cov[0] * dy * dy) / det;
  return -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * quad;
}

}  // namespace

void GmmSpec::validate() const {
  if (means.size() < 2) fail(ErrorKind::InvalidArgument, "gmm: need at least 2 classes");
  if (covariances.size() != means.size()) {
    fail(ErrorKind::InvalidArgument, "gmm: " + std::to_string(means.size()) + " means but " +
                                         std::to_string(covariances.size()) + " covariances");
  }
  for (std::size_t k = 0; k < covariances.size(); ++k) {
    const auto& c = covariances[k];
    // A symmetric 2x2 matrix is SPD iff its leading minors are positive.
    if (c[1] != c[2] || !(c[0] > 0.0) || !(det2(c) > 0.0)) {
      fail(ErrorKind::InvalidArgument, "gmm: covariance of class " + std::to_string(k + 1) + " is not SPD");
    }
  }
}

GmmSpec default_gmm() {
  GmmSpec spec;
  spec.means = {{2.0, 2.0}, {-2.0, 2.0}, {-2.0, -2.0}, {2.0, -2.0}};
  spec.covariances.assign(4, Mat2{0.1, 0.0, 0.0, 0.1});
  return spec;
}

std::vector<LabeledSample> sample_labeled(const GmmSpec& spec, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_labeled(spec, n, rng);
}

std::vector<LabeledSample> sample_labeled(const GmmSpec& spec, std::size_t n, std::mt19937_64& rng) {
  spec.validate();
  if (n == 0) fail(ErrorKind::InvalidArgument, "sample_labeled: n must be positive");
  std::uniform_int_distribution<int> label(1, static_cast<int>(spec.classes()));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<LabeledSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = label(rng);
    const auto& mu = spec.means[static_cast<std::size_t>(y - 1)];
    const auto& c = spec.covariances[static_cast<std::size_t>(y - 1)];
    // Cholesky factor of the 2x2 covariance.
    const double l00 = std::sqrt(c[0]);
    const double l10 = c[2] / l00;
    const double l11 = std::sqrt(c[3] - l10 * l10);
    const double z0 = normal(rng);
    const double z1 = normal(rng);
    out.push_back({{mu[0] + l00 * z0, mu[1] + l10 * z0 + l11 * z1}, y});
  }
  return out;
}

double true_log_density(const GmmSpec& spec, const Vec2& x, std::optional<int> y) {
  if (y) {
    check_label(spec, *y);
    const auto k = static_cast<std::size_t>(*y - 1);
    return component_log_density(spec.means[k], spec.covariances[k], x);
  }
  // log-sum-exp over components with uniform weights
  double best = -std::numeric_limits<double>::infinity();
  std::vector<double> logs(spec.classes());
  for (std::size_t k = 0; k < spec.classes(); ++k) {
    logs[k] = component_log_density(spec.means[k], spec.covariances[k], x);
    best = std::max(best, logs[k]);
  }
  double acc = 0.0;
  for (double l : logs) acc += std::exp(l - best);
  return best + std::log(acc) - std::log(static_cast<double>(spec.classes()));
}

Vec2 oracle_noise(const GmmSpec& spec, const Vec2& x_t, double alpha_bar, int y) {
  check_label(spec, y);
  const auto k = static_cast<std::size_t>(y - 1);
  const auto& mu = spec.means[k];
  const auto& s = spec.covariances[k];
  const double a = alpha_bar * s[0] + (1.0 - alpha_bar);
  const double b = alpha_bar * s[1];
  const double d = alpha_bar * s[3] + (1.0 - alpha_bar);
  const double det = a * d - b * b;
  const double rx = x_t[0] - std::sqrt(alpha_bar) * mu[0];
  const double ry = x_t[1] - std::sqrt(alpha_bar) * mu[1];
  const double scale = std::sqrt(1.0 - alpha_bar) / det;
  return {scale * (d * rx - b * ry), scale * (-b * rx + a * ry)};
}

void write_corpus(std::ostream& out, std::span<const LabeledSample> samples) {
  out << std::setprecision(17);
  for (const auto& s : samples) out << s.x0[0] << ' ' << s.x0[1] << ' ' << s.y << '\n';
}

}  // namespace ldistill
