#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>

#include "ldistill/numerics.hpp"

namespace ldistill {

// Low-rank update (alpha / rank) * B * A for one base matrix W0 (out x in).
// A is rank x in, B is out x rank.
struct LoraAdapter {
  Parameter a;
  Parameter b;
  std::size_t rank = 0;
  double alpha = 0.0;

  double scale() const noexcept { return alpha / static_cast<double>(rank); }
};

// Active evaluates W0 + (alpha / r) B A; Bypass evaluates W0 alone, which is
// how the teacher reuses a model that already carries adapters.
enum class AdapterMode { Active, Bypass };

class AdaptableLinear {
 public:
  // W0 ~ N(0, gain^2 * 2 / in), bias = 0.
  AdaptableLinear(std::string name, std::size_t in_features, std::size_t out_features, std::mt19937_64& rng,
                  double gain = 1.0);

  const std::string& name() const noexcept { return name_; }
  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

  Parameter& weight() noexcept { return weight_; }
  const Parameter& weight() const noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }
  const Parameter& bias() const noexcept { return bias_; }

  bool has_adapter() const noexcept { return adapter_.has_value(); }
  const LoraAdapter* adapter() const noexcept { return adapter_ ? &*adapter_ : nullptr; }
  LoraAdapter* adapter() noexcept { return adapter_ ? &*adapter_ : nullptr; }
  void set_adapter(LoraAdapter adapter);

  // x is (batch x in); returns (batch x out).
  Tensor forward(const Tensor& x, AdapterMode mode) const;
  // The weight the forward pass multiplies by under the given mode.
  Tensor weight_for(AdapterMode mode) const;

 private:
  std::string name_;
  std::size_t in_;
  std::size_t out_;
  Parameter weight_;
  Parameter bias_;
  std::optional<LoraAdapter> adapter_;
};

}  // namespace ldistill
