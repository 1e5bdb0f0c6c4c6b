#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "ldistill/distill.hpp"
#include "ldistill/error.hpp"
#include "ldistill/eval.hpp"
#include "ldistill/lora.hpp"

using namespace ldistill;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.hidden_width = 32;
  c.num_blocks = 2;
  c.time_embed_dim = 8;
  c.cond_embed_dim = 4;
  c.timesteps = 50;
  return c;
}

NoiseSchedule small_schedule() { return make_schedule(50, 1e-4, 0.05); }

TeacherTrainResult small_teacher(std::size_t steps = 300) {
  TeacherTrainConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = 64;
  cfg.adam.lr = 3e-3;
  return train_teacher(default_gmm(), small_config(), small_schedule(), cfg);
}

}  // namespace

TEST(TrainLog, StepsMustIncrease) {
  TrainLog log;
  log.append({0, 1.0, 0.5, 0.0});
  log.append({10, 0.9, 0.4, 0.1});
  EXPECT_THROW(log.append({10, 0.8, 0.3, 0.2}), Error);
  std::ostringstream out;
  log.write_csv(out);
  EXPECT_EQ(out.str().substr(0, out.str().find('\n')), "step,loss,agreement_mse,elapsed_s");
}

TEST(Teacher, InitialLossNearUnitVariance) {
  TeacherTrainConfig cfg;
  cfg.steps = 1;
  const auto r = train_teacher(default_gmm(), DenoiserConfig{}, make_schedule(200, 1e-4, 0.02), cfg);
  EXPECT_GE(r.initial_loss(), 0.5);
  EXPECT_LE(r.initial_loss(), 2.0);
}

TEST(Teacher, LossDecreases) {
  const auto r = small_teacher();
  EXPECT_LT(r.final_loss(), 0.5 * r.initial_loss());
  EXPECT_FALSE(r.log.records().empty());
}

TEST(Teacher, SameSeedSameWeights) {
  const auto a = small_teacher(20), b = small_teacher(20);
  const auto pa = a.model.base_parameters(), pb = b.model.base_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const auto va = pa[i].tensor().values(), vb = pb[i].tensor().values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin())) << pa[i].name();
  }
}

TEST(Teacher, FullDropoutNeverTouchesClassRows) {
  TeacherTrainConfig cfg;
  cfg.steps = 20;
  cfg.batch_size = 32;
  cfg.p_uncond = 1.0;
  const Denoiser init(small_config(), cfg.seed);
  const auto r = train_teacher(default_gmm(), small_config(), small_schedule(), cfg);
  const auto before = init.cond_table().tensor().values();
  const auto after = r.model.cond_table().tensor().values();
  const std::size_t d = small_config().cond_embed_dim;
  bool null_row_moved = false;
  for (std::size_t i = 0; i < d; ++i) null_row_moved = null_row_moved || before[i] != after[i];
  EXPECT_TRUE(null_row_moved);
  for (std::size_t i = d; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);
}

TEST(Teacher, RejectsMismatchedNetwork) {
  TeacherTrainConfig cfg;
  cfg.steps = 1;
  auto net = small_config();
  net.num_classes = 3;
  EXPECT_THROW(train_teacher(default_gmm(), net, small_schedule(), cfg), Error);
}

TEST(DistillLoss, ZeroInitClosedForm) {
  auto teacher = small_teacher(100);
  attach_adapters(teacher.model, 4, 4.0, admissible_layers(teacher.model.config(), 4), 7);
  const auto probe = make_probe_set(default_gmm(), small_schedule(), 256, 3);
  const std::vector<Label> nulls(probe.size(), std::nullopt);
  const auto cond = teacher.model.forward(probe.x_t, probe.t, probe.y, AdapterMode::Bypass);
  const auto uncond = teacher.model.forward(probe.x_t, probe.t, nulls, AdapterMode::Bypass);
  const double gap = mse(cond, uncond, Reduction::MeanRows).item();
  ASSERT_GT(gap, 0.0);
  for (double s : {0.0, 2.0, 3.0, 7.5}) {
    const double loss = distill_loss(teacher.model, probe, {s}).item();
    EXPECT_NEAR(loss, (s - 1.0) * (s - 1.0) * gap, 1e-10 * std::max(1.0, loss)) << "s = " << s;
    EXPECT_NEAR(agreement_mse(teacher.model, probe, {s}), loss, 1e-10 * std::max(1.0, loss));
  }
  EXPECT_EQ(distill_loss(teacher.model, probe, {1.0}).item(), 0.0);
  EXPECT_EQ(agreement_mse(teacher.model, probe, {1.0}), 0.0);
}

TEST(DistillConfig, LrSchedule) {
  DistillConfig c;
  c.steps = 100;
  c.lr = 2e-3;
  EXPECT_EQ(c.lr_at(1), 2e-3);
  EXPECT_NEAR(c.lr_at(51), 1e-3, 1e-15);
  EXPECT_NEAR(c.lr_at(100), 1e-3 * (1.0 + std::cos(std::numbers::pi * 0.99)), 1e-15);
  for (std::size_t k = 2; k <= c.steps; ++k) EXPECT_LT(c.lr_at(k), c.lr_at(k - 1));
  c.lr_schedule = LrSchedule::Constant;
  EXPECT_EQ(c.lr_at(1), 2e-3);
  EXPECT_EQ(c.lr_at(100), 2e-3);
}

TEST(Distill, TrainsOnlyAdaptersAndImprovesAgreement) {
  auto teacher = small_teacher();
  std::vector<std::vector<double>> base;
  for (const auto& p : teacher.model.base_parameters()) base.emplace_back(p.tensor().values().begin(), p.tensor().values().end());

  DistillConfig cfg;
  cfg.rank = 4;
  cfg.alpha = 4.0;
  cfg.steps = 400;
  cfg.batch_size = 64;
  cfg.eval_every = 100;
  cfg.probe_size = 256;
  std::size_t observed = 0;
  const auto r = run_distillation(teacher.model, default_gmm(), small_schedule(), cfg,
                                  [&](const Denoiser& m, std::size_t) {
                                    std::size_t trainable = 0;
                                    for (const auto& p : trainable_parameters(m)) trainable += p.numel();
                                    EXPECT_EQ(trainable, count_adapter_params(m.config(), 4,
                                                                              admissible_layers(m.config(), 4)));
                                    ++observed;
                                  });
  EXPECT_EQ(observed, 5u);
  EXPECT_EQ(r.losses.size(), 400u);
  EXPECT_EQ(r.trainable_params, count_adapter_params(small_config(), 4, admissible_layers(small_config(), 4)));
  EXPECT_EQ(r.parameter_allocations, 2 * r.adapted_layers);
  EXPECT_LT(r.final_agreement, 0.5 * r.initial_agreement);

  const auto after = teacher.model.base_parameters();
  ASSERT_EQ(after.size(), base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    const auto v = after[i].tensor().values();
    EXPECT_TRUE(std::equal(v.begin(), v.end(), base[i].begin())) << after[i].name();
    EXPECT_FALSE(after[i].tensor().has_grad()) << after[i].name();
  }
}

TEST(Distill, RefusesModelWithAdapters) {
  auto teacher = small_teacher(5);
  attach_adapters(teacher.model, 2, 2.0, all_layers(), 1);
  DistillConfig cfg;
  cfg.steps = 1;
  EXPECT_THROW(run_distillation(teacher.model, default_gmm(), small_schedule(), cfg), Error);
}

TEST(Distill, ConfigValidation) {
  DistillConfig cfg;
  cfg.guidance = -1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = DistillConfig{};
  cfg.rank = 0;
  EXPECT_THROW(cfg.validate(), Error);
}
