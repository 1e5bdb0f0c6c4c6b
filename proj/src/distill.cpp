#include "ldistill/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>

#include "ldistill/error.hpp"
#include "ldistill/eval.hpp"
#include "ldistill/lora.hpp"

namespace ldistill {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Probe sets draw from a stream that training batches never use.
constexpr std::uint64_t kProbeStream = 0x9e3779b97f4a7c15ULL;

}  // namespace

void TeacherTrainConfig::validate() const {
  if (steps == 0 || batch_size == 0) fail(ErrorKind::InvalidArgument, "teacher: steps and batch_size must be positive");
  if (!(p_uncond >= 0.0 && p_uncond <= 1.0)) fail(ErrorKind::InvalidArgument, "teacher: p_uncond must lie in [0, 1]");
  if (!(adam.lr > 0.0)) fail(ErrorKind::InvalidArgument, "teacher: lr must be positive");
}

void DistillConfig::validate() const {
  if (!(guidance >= 0.0) || !std::isfinite(guidance)) {
    fail(ErrorKind::InvalidArgument, "distill: guidance must be finite and >= 0");
  }
  if (rank < 1) fail(ErrorKind::InvalidArgument, "distill: rank must be >= 1");
  if (!(alpha > 0.0)) fail(ErrorKind::InvalidArgument, "distill: alpha must be positive");
  if (batch_size == 0 || probe_size == 0 || eval_every == 0) {
    fail(ErrorKind::InvalidArgument, "distill: batch_size, probe_size and eval_every must be positive");
  }
  if (!(lr > 0.0)) fail(ErrorKind::InvalidArgument, "distill: lr must be positive");
}

double DistillConfig::lr_at(std::size_t step) const {
  if (lr_schedule == LrSchedule::Constant || steps == 0) return lr;
  const double progress = static_cast<double>(step - 1) / static_cast<double>(steps);
  return 0.5 * lr * (1.0 + std::cos(std::numbers::pi * progress));
}

void TrainLog::append(const TrainRecord& record) {
  if (!records_.empty() && record.step <= records_.back().step) {
    fail(ErrorKind::InvalidArgument, "train log: step " + std::to_string(record.step) + " does not follow step " +
                                         std::to_string(records_.back().step));
  }
  records_.push_back(record);
}

void TrainLog::write_csv(std::ostream& out) const {
  out << "step,loss,agreement_mse,elapsed_s\n" << std::setprecision(12);
  for (const auto& r : records_) out << r.step << ',' << r.loss << ',' << r.agreement_mse << ',' << r.elapsed_s << '\n';
}

double TeacherTrainResult::final_loss() const {
  const std::size_t window = std::min<std::size_t>(100, losses.size());
  return std::accumulate(losses.end() - static_cast<std::ptrdiff_t>(window), losses.end(), 0.0) /
         static_cast<double>(window);
}

TeacherTrainResult train_teacher(const GmmSpec& data, const DenoiserConfig& net, const NoiseSchedule& sched,
                                 const TeacherTrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (net.num_classes != data.classes() || net.timesteps != sched.steps || net.data_dim != 2) {
    fail(ErrorKind::Mismatch, "train_teacher: network config does not match data (" + std::to_string(data.classes()) +
                                  " classes, 2-D) and schedule (" + std::to_string(sched.steps) + " steps)");
  }
  TeacherTrainResult result{build_denoiser(net, cfg.seed), {}, {}};
  auto params = result.model.parameters();
  AdamState adam(cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  std::bernoulli_distribution drop(cfg.p_uncond);
  const auto start = Clock::now();
  result.losses.reserve(cfg.steps);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    auto batch = make_noised_batch(data, sched, cfg.batch_size, rng);
    for (auto& y : batch.y) {
      if (drop(rng)) y = std::nullopt;
    }
    const Tensor loss = mse(predict_noise(result.model, batch.x_t, batch.t, batch.y), batch.eps);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      fail(ErrorKind::Numeric, "train_teacher: non-finite loss at step " + std::to_string(step));
    }
    backpropagate(loss);
    adam_update(params, adam);
    result.losses.push_back(value);
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      const std::size_t window = std::min(cfg.log_every, result.losses.size());
      const double smoothed = std::accumulate(result.losses.end() - static_cast<std::ptrdiff_t>(window),
                                              result.losses.end(), 0.0) /
                              static_cast<double>(window);
      result.log.append({step, smoothed, 0.0, seconds_since(start)});
    }
  }
  return result;
}

NoisedBatch make_probe_set(const GmmSpec& data, const NoiseSchedule& sched, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ kProbeStream);
  return make_noised_batch(data, sched, n, rng);
}

Tensor distill_loss(const Denoiser& model, const NoisedBatch& batch, GuidanceSpec guidance) {
  NfeCounter nfe;
  const Tensor target = teacher_predict(model, batch.x_t, batch.t, batch.y, guidance, nfe);
  const Tensor student = student_predict(model, batch.x_t, batch.t, batch.y, nfe);
  return mse(student, target, Reduction::MeanRows);
}

DistillResult run_distillation(Denoiser& model, const GmmSpec& data, const NoiseSchedule& sched,
                               const DistillConfig& cfg, const DistillObserver& observer) {
  cfg.validate();
  if (model.has_adapters()) fail(ErrorKind::InvalidArgument, "run_distillation: model already carries adapters");
  if (model.config().num_classes != data.classes() || model.config().timesteps != sched.steps) {
    fail(ErrorKind::Mismatch, "run_distillation: teacher does not match data/schedule");
  }
  const GuidanceSpec guidance{cfg.guidance};
  const auto allocations_before = Parameter::allocation_count();

  DistillResult result;
  result.adapted_layers =
      attach_adapters(model, cfg.rank, cfg.alpha, admissible_layers(model.config(), cfg.rank), cfg.seed);
  model.freeze_base();
  auto trainable = trainable_parameters(model);
  for (const auto& p : trainable) result.trainable_params += p.numel();

  AdamState adam(AdamOptions{.lr = cfg.lr});
  std::mt19937_64 rng(cfg.seed);
  const NoisedBatch probe = make_probe_set(data, sched, cfg.probe_size, cfg.seed);
  const auto start = Clock::now();

  result.initial_agreement = agreement_mse(model, probe, guidance);
  result.log.append({0, distill_loss(model, probe, guidance).item(), result.initial_agreement, 0.0});
  if (observer) observer(model, 0);
  result.final_agreement = result.initial_agreement;
  result.losses.reserve(cfg.steps);

  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const NoisedBatch batch = make_noised_batch(data, sched, cfg.batch_size, rng);
    const Tensor loss = distill_loss(model, batch, guidance);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      fail(ErrorKind::Numeric, "run_distillation: non-finite loss at step " + std::to_string(step));
    }
    backpropagate(loss);
    adam.set_lr(cfg.lr_at(step));
    adam_update(trainable, adam);
    result.losses.push_back(value);

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      result.final_agreement = agreement_mse(model, probe, guidance);
      result.log.append({step, value, result.final_agreement, seconds_since(start)});
      if (observer) observer(model, step);
    }
  }
  result.adapters = model.adapter_parameters();
  result.parameter_allocations = Parameter::allocation_count() - allocations_before;
  return result;
}

}  // namespace ldistill
