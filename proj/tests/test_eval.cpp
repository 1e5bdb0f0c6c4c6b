#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ldistill/distill.hpp"
#include "ldistill/error.hpp"
#include "ldistill/eval.hpp"
#include "ldistill/lora.hpp"

using namespace ldistill;

namespace {

Tensor component_samples(const GmmSpec& spec, int label, std::size_t n, std::uint64_t seed) {
  GmmSpec single{{spec.means[static_cast<std::size_t>(label - 1)], spec.means[0]},
                 {spec.covariances[static_cast<std::size_t>(label - 1)], spec.covariances[0]}};
  std::vector<double> v;
  for (const auto& s : sample_labeled(single, 4 * n, seed)) {
    if (s.y != 1) continue;
    v.push_back(s.x0[0]);
    v.push_back(s.x0[1]);
    if (v.size() == 2 * n) break;
  }
  return Tensor::from_values({n, 2}, std::move(v));
}

}  // namespace

TEST(EnergyDistance, PointMasses) {
  const double d = 1.75;
  const auto a = Tensor::from_values({3, 2}, {0, 0, 0, 0, 0, 0});
  const auto b = Tensor::from_values({2, 2}, {d, 0, d, 0});
  EXPECT_DOUBLE_EQ(energy_distance(a, b), 2.0 * d);
}

TEST(EnergyDistance, IdenticalAndSymmetric) {
  const auto spec = default_gmm();
  const auto a = component_samples(spec, 1, 300, 1);
  const auto b = component_samples(spec, 2, 200, 2);
  EXPECT_LT(std::abs(energy_distance(a, a)), 1e-12);
  EXPECT_NEAR(energy_distance(a, b), energy_distance(b, a), 1e-12);
  EXPECT_GT(energy_distance(a, b), 1.0);
  EXPECT_THROW(energy_distance(a, Tensor::zeros({2, 3})), Error);
}

TEST(Alignment, TrueAndWrongComponents) {
  const auto spec = default_gmm();
  const std::size_t n = 1000;
  for (int y = 1; y <= 4; ++y) {
    const auto s = component_samples(spec, y, n, 10 + y);
    const auto right = condition_alignment(s, y, spec);
    EXPECT_GE(right.nearest_fraction, 0.99);
    // Each coordinate of the mean has sd sqrt(0.1 / n); 3 sigma on the norm.
    EXPECT_LE(right.mean_error, 3.0 * std::sqrt(2.0 * 0.1 / n));
    const int wrong = y % 4 + 1;
    EXPECT_LE(condition_alignment(s, wrong, spec).nearest_fraction, 0.01);
  }
  EXPECT_THROW(condition_alignment(component_samples(spec, 1, 10, 1), 5, spec), Error);
}

TEST(Agreement, ZeroInitAndPermutation) {
  DenoiserConfig net;
  net.hidden_width = 16;
  net.num_blocks = 1;
  net.time_embed_dim = 8;
  net.cond_embed_dim = 4;
  const auto sched = make_schedule(200, 1e-4, 0.02);
  Denoiser model(net, 3);
  attach_adapters(model, 2, 2.0, admissible_layers(net, 2), 4);
  const auto probe = make_probe_set(default_gmm(), sched, 64, 5);
  EXPECT_EQ(agreement_mse(model, probe, {1.0}), 0.0);
  for (auto& l : model.layers()) {
    if (auto* a = l.adapter()) {
      for (auto& v : a->b.tensor().mutable_values()) v = 0.05;
    }
  }
  const double base = agreement_mse(model, probe, {3.0});
  EXPECT_GT(base, 0.0);

  NoisedBatch reversed = probe;
  std::vector<double> x(probe.x_t.numel());
  const auto xv = probe.x_t.values();
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const std::size_t j = probe.size() - 1 - i;
    x[2 * i] = xv[2 * j];
    x[2 * i + 1] = xv[2 * j + 1];
    reversed.t[i] = probe.t[j];
    reversed.y[i] = probe.y[j];
  }
  reversed.x_t = Tensor::from_values(probe.x_t.shape(), x);
  EXPECT_NEAR(agreement_mse(model, reversed, {3.0}), base, 1e-12 * base);
}

TEST(Evaluate, ReportFieldsOnUntrainedModel) {
  DenoiserConfig net;
  net.hidden_width = 16;
  net.num_blocks = 1;
  net.time_embed_dim = 8;
  net.cond_embed_dim = 4;
  net.timesteps = 20;
  const auto sched = make_schedule(20, 1e-4, 0.05);
  Denoiser model(net, 3);
  attach_adapters(model, 2, 2.0, admissible_layers(net, 2), 4);
  EvalOptions opts;
  opts.samples_per_class = 64;
  opts.steps = 10;
  opts.probe_size = 32;
  const auto report = evaluate(model, default_gmm(), sched, {1.0}, opts);
  ASSERT_EQ(report.classes.size(), 4u);
  EXPECT_TRUE(report.all_finite());
  EXPECT_EQ(report.agreement_mse, 0.0);
  for (const auto& c : report.classes) {
    // At s = 1 with zero-init adapters the student and reference teacher share
    // seeds and predictors, so their samples coincide.
    EXPECT_LT(std::abs(c.energy_student_vs_teacher), 1e-12);
    EXPECT_GT(c.energy_teacher_vs_teacher, 0.0);
    EXPECT_TRUE(c.quality_preserved);
  }
  EXPECT_TRUE(report.quality_preserved());
  std::ostringstream csv;
  report.write_csv(csv);
  EXPECT_NE(csv.str().find("energy_teacher_teacher"), std::string::npos);
  EXPECT_NE(report.summary().find("agreement MSE"), std::string::npos);
}
