#include "ldistill/layers.hpp"

#include <cmath>

#include "ldistill/error.hpp"

namespace ldistill {

AdaptableLinear::AdaptableLinear(std::string name, std::size_t in_features, std::size_t out_features,
                                 std::mt19937_64& rng, double gain)
    : name_(std::move(name)), in_(in_features), out_(out_features) {
  if (in_ == 0 || out_ == 0) fail(ErrorKind::InvalidArgument, "layer '" + name_ + "': zero dimension");
  std::normal_distribution<double> normal(0.0, gain * std::sqrt(2.0 / static_cast<double>(in_)));
  std::vector<double> w(out_ * in_);
  for (auto& v : w) v = normal(rng);
  weight_ = Parameter(name_ + ".W0", Tensor::from_values({out_, in_}, std::move(w)));
  bias_ = Parameter(name_ + ".bias", Tensor::zeros({out_}));
}

void AdaptableLinear::set_adapter(LoraAdapter adapter) {
  if (adapter.a.tensor().shape() != Shape{adapter.rank, in_} ||
      adapter.b.tensor().shape() != Shape{out_, adapter.rank}) {
    fail(ErrorKind::Shape, "layer '" + name_ + "': adapter shapes " + shape_string(adapter.a.tensor().shape()) +
                               " / " + shape_string(adapter.b.tensor().shape()) + " do not fit W0 " +
                               shape_string(weight_.tensor().shape()));
  }
  adapter_ = std::move(adapter);
}

Tensor AdaptableLinear::weight_for(AdapterMode mode) const {
  if (mode == AdapterMode::Bypass || !adapter_) return weight_.tensor();
  const Tensor delta = matmul(adapter_->b.tensor(), adapter_->a.tensor());
  return add(weight_.tensor(), mul(delta, Tensor::scalar(adapter_->scale())));
}

Tensor AdaptableLinear::forward(const Tensor& x, AdapterMode mode) const {
  return add(matmul(x, weight_for(mode), Transpose::Yes), bias_.tensor());
}

}  // namespace ldistill
