#pragma once

// Labeled 2-D Gaussian-mixture corpus with closed-form densities.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <vector>

namespace ldistill {

using Vec2 = std::array<double, 2>;
// Row-major symmetric 2x2 matrix {a, b, b, d}.
using Mat2 = std::array<double, 4>;

struct GmmSpec {
  std::vector<Vec2> means;
  std::vector<Mat2> covariances;

  std::size_t classes() const noexcept { return means.size(); }
  // Throws unless K >= 2, list lengths agree and every covariance is SPD.
  void validate() const;
};

// Labels are 1-based: y in [1, K].
struct LabeledSample {
  Vec2 x0;
  int y;
};

// K = 4, means at (+-2, +-2), covariance 0.1 I.
GmmSpec default_gmm();

std::vector<LabeledSample> sample_labeled(const GmmSpec& spec, std::size_t n, std::uint64_t seed);
// Same draw, continuing an existing generator.
std::vector<LabeledSample> sample_labeled(const GmmSpec& spec, std::size_t n, std::mt19937_64& rng);

// Component log-density for a label, uniform-mixture log-density without one.
double true_log_density(const GmmSpec& spec, const Vec2& x, std::optional<int> y);

// Exact noise prediction for the component y at noise level alpha_bar:
// sqrt(1 - abar) * C^-1 (x - sqrt(abar) mu) with C = abar Sigma + (1 - abar) I.
Vec2 oracle_noise(const GmmSpec& spec, const Vec2& x_t, double alpha_bar, int y);

// One record per line: "x0_0 x0_1 y".
void write_corpus(std::ostream& out, std::span<const LabeledSample> samples);

}  // namespace ldistill
