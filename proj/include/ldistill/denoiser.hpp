#pragma once

// Conditional noise-prediction network eps(x_t, t, y).
//
// Layout (H = hidden_width):
//   h   = input(concat(x_t, time_embedding(t))) + cond_proj(cond_table[y])
//   h  += block_i.fc2(silu(block_i.fc1(silu(h))))      for each block
//   eps = output(silu(h))
// Row 0 of cond_table is the null condition; class y uses row y.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ldistill/layers.hpp"
#include "ldistill/numerics.hpp"

namespace ldistill {

// A class label in [1, K], or nullopt for the null condition.
using Label = std::optional<int>;

struct DenoiserConfig {
  std::size_t data_dim = 2;
  std::size_t hidden_width = 128;
  std::size_t num_blocks = 3;
  std::size_t time_embed_dim = 32;
  std::size_t cond_embed_dim = 16;
  std::size_t num_classes = 4;
  // Number of diffusion steps T; step indices are normalized by it.
  std::size_t timesteps = 200;

  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

struct LayerShape {
  std::string name;
  std::size_t in = 0;
  std::size_t out = 0;
};

// Linear layers in forward order, derived from the config alone.
std::vector<LayerShape> layer_shapes(const DenoiserConfig& config);
// Closed-form count of base (non-adapter) parameters.
std::size_t count_base_params(const DenoiserConfig& config);

// Sinusoidal embedding of t / T with frequencies geometric from 1 to 1/10000:
// first half sin, second half cos.
std::vector<double> time_embedding(std::size_t t, std::size_t timesteps, std::size_t dim);

class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, std::uint64_t seed);

  const DenoiserConfig& config() const noexcept { return config_; }

  std::vector<AdaptableLinear>& layers() noexcept { return layers_; }
  const std::vector<AdaptableLinear>& layers() const noexcept { return layers_; }
  AdaptableLinear& layer(const std::string& name);

  Parameter& cond_table() noexcept { return cond_table_; }
  const Parameter& cond_table() const noexcept { return cond_table_; }

  // Base weights in checkpoint order, then adapter factors.
  std::vector<Parameter> parameters() const;
  std::vector<Parameter> base_parameters() const;
  std::vector<Parameter> adapter_parameters() const;
  bool has_adapters() const;

  void freeze_base(bool frozen = true);

  Tensor forward(const Tensor& x_t, std::span<const std::size_t> t, std::span<const Label> y,
                 AdapterMode mode) const;

 private:
  DenoiserConfig config_;
  Parameter cond_table_;
  std::vector<AdaptableLinear> layers_;
};

Denoiser build_denoiser(const DenoiserConfig& config, std::uint64_t seed);

// Single network evaluation with any attached adapters active.
Tensor predict_noise(const Denoiser& model, const Tensor& x_t, std::span<const std::size_t> t,
                     std::span<const Label> y);

}  // namespace ldistill
