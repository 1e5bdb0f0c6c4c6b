#include "ldistill/lora.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "ldistill/error.hpp"

namespace ldistill {

LayerFilter all_layers() {
  return [](std::string_view) { return true; };
}

LayerFilter admissible_layers(const DenoiserConfig& config, std::size_t rank) {
  std::vector<std::string> names;
  for (const auto& s : layer_shapes(config)) {
    if (rank <= std::min(s.in, s.out)) names.push_back(s.name);
  }
  return [names = std::move(names)](std::string_view name) {
    return std::find(names.begin(), names.end(), name) != names.end();
  };
}

std::size_t attach_adapters(Denoiser& model, std::size_t rank, double alpha, const LayerFilter& filter,
                            std::uint64_t seed) {
  if (rank < 1) fail(ErrorKind::InvalidArgument, "attach_adapters: rank must be >= 1");
  if (!(alpha > 0.0)) fail(ErrorKind::InvalidArgument, "attach_adapters: alpha must be positive");
  std::vector<AdaptableLinear*> targets;
  for (auto& layer : model.layers()) {
    if (!filter(layer.name())) continue;
    if (layer.has_adapter()) {
      fail(ErrorKind::InvalidArgument, "attach_adapters: layer '" + layer.name() + "' already has an adapter");
    }
    if (rank > std::min(layer.in_features(), layer.out_features())) {
      fail(ErrorKind::InvalidArgument, "attach_adapters: rank " + std::to_string(rank) + " exceeds min(in, out) = " +
                                           std::to_string(std::min(layer.in_features(), layer.out_features())) +
                                           " for layer '" + layer.name() + "'");
    }
    targets.push_back(&layer);
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kAdapterInitStd);
  for (auto* layer : targets) {
    std::vector<double> a(rank * layer->in_features());
    for (auto& v : a) v = normal(rng);
    LoraAdapter adapter{
        Parameter(layer->name() + ".lora.A", Tensor::from_values({rank, layer->in_features()}, std::move(a))),
        Parameter(layer->name() + ".lora.B", Tensor::zeros({layer->out_features(), rank})),
        rank,
        alpha,
    };
    layer->set_adapter(std::move(adapter));
    layer->weight().set_frozen(true);
    layer->bias().set_frozen(true);
  }
  return targets.size();
}

Tensor effective_weight(const AdaptableLinear& layer) {
  NoGradGuard no_grad;
  return layer.weight_for(AdapterMode::Active).detach();
}

std::size_t count_adapter_params(const DenoiserConfig& config, std::size_t rank, const LayerFilter& filter) {
  std::size_t n = 0;
  for (const auto& s : layer_shapes(config)) {
    if (filter(s.name)) n += rank * (s.in + s.out);
  }
  return n;
}

std::vector<Parameter> trainable_parameters(const Denoiser& model) {
  std::vector<Parameter> out;
  for (auto& p : model.parameters()) {
    if (!p.frozen()) out.push_back(p);
  }
  return out;
}

}  // namespace ldistill
