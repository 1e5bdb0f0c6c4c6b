#pragma once

// Teacher pretraining with condition dropout, and distillation of the guided
// two-pass teacher into the adapters of the same model.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "ldistill/datagen.hpp"
#include "ldistill/denoiser.hpp"
#include "ldistill/diffusion.hpp"
#include "ldistill/numerics.hpp"

namespace ldistill {

struct TeacherTrainConfig {
  std::size_t steps = 6000;
  std::size_t batch_size = 256;
  double p_uncond = 0.1;
  AdamOptions adam{};
  std::uint64_t seed = 1;
  std::size_t log_every = 100;

  void validate() const;
};

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double agreement_mse = 0.0;
  double elapsed_s = 0.0;
};

class TrainLog {
 public:
  // Steps must be strictly increasing.
  void append(const TrainRecord& record);
  const std::vector<TrainRecord>& records() const noexcept { return records_; }
  // "step,loss,agreement_mse,elapsed_s"
  void write_csv(std::ostream& out) const;

 private:
  std::vector<TrainRecord> records_;
};

struct TeacherTrainResult {
  Denoiser model;
  std::vector<double> losses;  // one per optimizer step
  TrainLog log;

  double initial_loss() const { return losses.front(); }
  // Mean over the last 100 steps.
  double final_loss() const;
};

// Standard denoising objective; labels replaced by null with probability p_uncond.
TeacherTrainResult train_teacher(const GmmSpec& data, const DenoiserConfig& net, const NoiseSchedule& sched,
                                 const TeacherTrainConfig& cfg);

enum class LrSchedule { Constant, Cosine };

struct DistillConfig {
  double guidance = 3.0;
  std::size_t rank = 8;
  double alpha = 8.0;
  std::size_t steps = 20000;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  // Cosine decays from lr at step 1 to zero after the last step.
  LrSchedule lr_schedule = LrSchedule::Cosine;
  std::uint64_t seed = 2;
  std::size_t eval_every = 1000;
  std::size_t probe_size = 1024;

  void validate() const;
  // Learning rate used for optimizer step `step` (1-based).
  double lr_at(std::size_t step) const;
};

// Held-out probe inputs for a distillation run; disjoint seed stream from the
// training batches.
NoisedBatch make_probe_set(const GmmSpec& data, const NoiseSchedule& sched, std::size_t n, std::uint64_t seed);

// Mean over the batch of ||student(x_t, t, y) - teacher(x_t, t, y; s)||^2. The
// teacher target carries no gradient.
Tensor distill_loss(const Denoiser& model, const NoisedBatch& batch, GuidanceSpec guidance);

struct DistillResult {
  TrainLog log;
  std::vector<double> losses;  // one per optimizer step
  std::vector<Parameter> adapters;
  std::size_t adapted_layers = 0;
  std::size_t trainable_params = 0;
  double initial_agreement = 0.0;
  double final_agreement = 0.0;
  // Parameter objects created during the run; only adapter factors qualify.
  std::uint64_t parameter_allocations = 0;
};

using DistillObserver = std::function<void(const Denoiser& model, std::size_t step)>;

// Attaches adapters to `model` (rank/alpha from cfg, every admissible layer),
// freezes every base parameter and trains only A/B with Adam. The observer,
// when set, runs after each held-out evaluation.
DistillResult run_distillation(Denoiser& model, const GmmSpec& data, const NoiseSchedule& sched,
                               const DistillConfig& cfg, const DistillObserver& observer = {});

}  // namespace ldistill
