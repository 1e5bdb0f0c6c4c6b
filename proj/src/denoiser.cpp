#include "ldistill/denoiser.hpp"

#include <cmath>
#include <random>

#include "ldistill/error.hpp"

namespace ldistill {

namespace {
constexpr double kOutputGain = 0.05;
}  // namespace

void DenoiserConfig::validate() const {
  if (data_dim == 0 || hidden_width == 0 || time_embed_dim == 0 || cond_embed_dim == 0 || num_classes == 0 ||
      timesteps == 0) {
    fail(ErrorKind::InvalidArgument, "denoiser config: all dimensions must be positive");
  }
  if (num_blocks < 1) fail(ErrorKind::InvalidArgument, "denoiser config: num_blocks must be >= 1");
  if (time_embed_dim % 2 != 0) {
    fail(ErrorKind::InvalidArgument, "denoiser config: time_embed_dim must be even, got " +
                                         std::to_string(time_embed_dim));
  }
}

std::vector<LayerShape> layer_shapes(const DenoiserConfig& c) {
  std::vector<LayerShape> out;
  out.push_back({"input", c.data_dim + c.time_embed_dim, c.hidden_width});
  out.push_back({"cond_proj", c.cond_embed_dim, c.hidden_width});
  for (std::size_t b = 0; b < c.num_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    out.push_back({prefix + ".fc1", c.hidden_width, c.hidden_width});
    out.push_back({prefix + ".fc2", c.hidden_width, c.hidden_width});
  }
  out.push_back({"output", c.hidden_width, c.data_dim});
  return out;
}

std::size_t count_base_params(const DenoiserConfig& c) {
  std::size_t n = (c.num_classes + 1) * c.cond_embed_dim;
  for (const auto& l : layer_shapes(c)) n += l.in * l.out + l.out;
  return n;
}

std::vector<double> time_embedding(std::size_t t, std::size_t timesteps, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    fail(ErrorKind::InvalidArgument, "time_embedding: dim must be even and positive, got " + std::to_string(dim));
  }
  if (t < 1 || t > timesteps) {
    fail(ErrorKind::InvalidArgument,
         "time_embedding: step " + std::to_string(t) + " outside [1, " + std::to_string(timesteps) + "]");
  }
  const std::size_t half = dim / 2;
  const double tau = static_cast<double>(t) / static_cast<double>(timesteps);
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < half; ++i) {
    const double exponent = half > 1 ? static_cast<double>(i) / static_cast<double>(half - 1) : 0.0;
    const double freq = std::pow(10000.0, -exponent);
    out[i] = std::sin(tau * freq);
    out[half + i] = std::cos(tau * freq);
  }
  return out;
}

Denoiser::Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> table((config_.num_classes + 1) * config_.cond_embed_dim);
  for (auto& v : table) v = normal(rng);
  cond_table_ = Parameter("cond_embed.table",
                          Tensor::from_values({config_.num_classes + 1, config_.cond_embed_dim}, std::move(table)));
  // The output projection starts small so the untrained prediction sits near 0.
  for (const auto& shape : layer_shapes(config_)) {
    layers_.emplace_back(shape.name, shape.in, shape.out, rng, shape.name == "output" ? kOutputGain : 1.0);
  }
}

AdaptableLinear& Denoiser::layer(const std::string& name) {
  for (auto& l : layers_) {
    if (l.name() == name) return l;
  }
  fail(ErrorKind::InvalidArgument, "no layer named '" + name + "'");
}

std::vector<Parameter> Denoiser::base_parameters() const {
  std::vector<Parameter> out{cond_table_};
  for (const auto& l : layers_) {
    out.push_back(l.weight());
    out.push_back(l.bias());
  }
  return out;
}

std::vector<Parameter> Denoiser::adapter_parameters() const {
  std::vector<Parameter> out;
  for (const auto& l : layers_) {
    if (const auto* a = l.adapter()) {
      out.push_back(a->a);
      out.push_back(a->b);
    }
  }
  return out;
}

std::vector<Parameter> Denoiser::parameters() const {
  auto out = base_parameters();
  auto adapters = adapter_parameters();
  out.insert(out.end(), adapters.begin(), adapters.end());
  return out;
}

bool Denoiser::has_adapters() const {
  for (const auto& l : layers_) {
    if (l.has_adapter()) return true;
  }
  return false;
}

void Denoiser::freeze_base(bool frozen) {
  cond_table_.set_frozen(frozen);
  for (auto& l : layers_) {
    l.weight().set_frozen(frozen);
    l.bias().set_frozen(frozen);
  }
}

Tensor Denoiser::forward(const Tensor& x_t, std::span<const std::size_t> t, std::span<const Label> y,
                         AdapterMode mode) const {
  const std::size_t batch = x_t.rows();
  if (x_t.shape() != Shape{batch, config_.data_dim}) {
    fail(ErrorKind::Shape, "denoiser: x_t has shape " + shape_string(x_t.shape()) + ", expected [b," +
                               std::to_string(config_.data_dim) + "]");
  }
  if (t.size() != batch || y.size() != batch) {
    fail(ErrorKind::Shape, "denoiser: batch of " + std::to_string(batch) + " with " + std::to_string(t.size()) +
                               " steps and " + std::to_string(y.size()) + " labels");
  }
  std::vector<std::size_t> rows(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    if (y[i] && (*y[i] < 1 || static_cast<std::size_t>(*y[i]) > config_.num_classes)) {
      fail(ErrorKind::InvalidArgument, "denoiser: label " + std::to_string(*y[i]) + " outside [1, " +
                                           std::to_string(config_.num_classes) + "]");
    }
    rows[i] = y[i] ? static_cast<std::size_t>(*y[i]) : 0;
  }
  std::vector<double> temb;
  temb.reserve(batch * config_.time_embed_dim);
  for (std::size_t i = 0; i < batch; ++i) {
    const auto e = time_embedding(t[i], config_.timesteps, config_.time_embed_dim);
    temb.insert(temb.end(), e.begin(), e.end());
  }
  const Tensor time = Tensor::from_values({batch, config_.time_embed_dim}, std::move(temb));

  auto it = layers_.begin();
  const auto& input = *it++;
  const auto& cond_proj = *it++;
  Tensor h = add(input.forward(concat(x_t, time), mode), cond_proj.forward(embedding(cond_table_.tensor(), rows), mode));
  for (std::size_t b = 0; b < config_.num_blocks; ++b) {
    const auto& fc1 = *it++;
    const auto& fc2 = *it++;
    h = add(h, fc2.forward(silu(fc1.forward(silu(h), mode)), mode));
  }
  return it->forward(silu(h), mode);
}

Denoiser build_denoiser(const DenoiserConfig& config, std::uint64_t seed) { return Denoiser(config, seed); }

Tensor predict_noise(const Denoiser& model, const Tensor& x_t, std::span<const std::size_t> t,
                     std::span<const Label> y) {
  return model.forward(x_t, t, y, AdapterMode::Active);
}

}  // namespace ldistill
