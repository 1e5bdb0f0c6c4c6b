#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "ldistill/denoiser.hpp"

namespace ldistill {

using LayerFilter = std::function<bool(std::string_view layer_name)>;

LayerFilter all_layers();
// Layers whose shape admits the rank (rank <= min(in, out)). With the default
// config and rank 8 this is every layer except the 2-wide output projection.
LayerFilter admissible_layers(const DenoiserConfig& config, std::size_t rank);

inline constexpr double kAdapterInitStd = 0.02;

// Gives every filtered layer a fresh adapter (A ~ N(0, 0.02^2), B = 0) and
// freezes its W0 and bias. Validates every filtered layer before touching any.
std::size_t attach_adapters(Denoiser& model, std::size_t rank, double alpha, const LayerFilter& filter,
                            std::uint64_t seed);

// W0 when the layer has no adapter, else W0 + (alpha / r) B A. Values only.
Tensor effective_weight(const AdaptableLinear& layer);

// Sum over filtered layers of r * (in + out).
std::size_t count_adapter_params(const DenoiserConfig& config, std::size_t rank, const LayerFilter& filter);

std::vector<Parameter> trainable_parameters(const Denoiser& model);

}  // namespace ldistill
