#pragma once

// Variance schedule, forward noising, classifier-free guidance and samplers.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ldistill/datagen.hpp"
#include "ldistill/denoiser.hpp"
#include "ldistill/numerics.hpp"

namespace ldistill {

struct NoiseSchedule {
  // Vectors are indexed by t - 1 for t in [1, steps].
  std::size_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  // alpha_bar_t, with alpha_bar_0 = 1.
  double alpha_bar_at(std::size_t t) const;
};

// Linear beta from beta_min to beta_max over T steps.
NoiseSchedule make_schedule(std::size_t steps, double beta_min, double beta_max);

// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, row by row.
Tensor q_sample(const Tensor& x0, std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& sched);

// Noised training or probe inputs: x0 from the corpus, t uniform in [1, T],
// eps ~ N(0, I), x_t = q_sample(x0, t, eps). Labels are never null.
struct NoisedBatch {
  Tensor x_t;
  Tensor eps;
  std::vector<std::size_t> t;
  std::vector<Label> y;

  std::size_t size() const noexcept { return t.size(); }
};

NoisedBatch make_noised_batch(const GmmSpec& spec, const NoiseSchedule& sched, std::size_t n, std::mt19937_64& rng);

struct GuidanceSpec {
  double s = 3.0;
};

// eps_uncond + s (eps_cond - eps_uncond), exact at s = 0 and s = 1.
Tensor guidance_combine(const Tensor& eps_uncond, const Tensor& eps_cond, GuidanceSpec guidance);

class NfeCounter {
 public:
  void record(std::uint64_t evaluations) noexcept { count_ += evaluations; }
  std::uint64_t count() const noexcept { return count_; }

 private:
  std::uint64_t count_ = 0;
};

// Two evaluations with the base weights only (adapters bypassed): y and null.
Tensor teacher_predict(const Denoiser& model, const Tensor& x_t, std::span<const std::size_t> t,
                       std::span<const Label> y, GuidanceSpec guidance, NfeCounter& nfe);

// One evaluation with adapters active.
Tensor student_predict(const Denoiser& model, const Tensor& x_t, std::span<const std::size_t> t,
                       std::span<const Label> y, NfeCounter& nfe);

using Predictor =
    std::function<Tensor(const Tensor& x_t, std::span<const std::size_t> t, std::span<const Label> y, NfeCounter& nfe)>;

Predictor teacher_predictor(const Denoiser& model, GuidanceSpec guidance);
Predictor student_predictor(const Denoiser& model);

enum class SamplerMode { Ancestral, Deterministic };

std::string to_string(SamplerMode mode);
SamplerMode parse_sampler_mode(const std::string& text);

// Evenly spaced descending subsequence floor(k T / S), k = S..1.
std::vector<std::size_t> sampling_timesteps(std::size_t schedule_steps, std::size_t sampling_steps);

struct SampleRun {
  Tensor samples;  // n x data_dim
  std::uint64_t nfe = 0;
  double wall_clock_s = 0.0;
};

// Reverse process from x_T ~ N(0, I). Deterministic mode is DDIM with eta = 0;
// ancestral mode is the eta = 1 update, which is DDPM when steps == T.
SampleRun sample(const Predictor& predictor, const NoiseSchedule& sched, std::size_t n, std::size_t data_dim,
                 Label y, std::uint64_t seed, SamplerMode mode, std::size_t steps);

// "x0 x1 y" per line; the null label prints as 0.
void write_samples(std::ostream& out, const Tensor& samples, Label y);

struct BenchmarkRow {
  std::string mode;
  std::size_t steps = 0;
  std::uint64_t nfe = 0;
  double wall_clock_s = 0.0;
};

// Header "mode,steps,nfe,wall_clock_s" then one line per row.
void write_benchmark_csv(std::ostream& out, std::span<const BenchmarkRow> rows);

}  // namespace ldistill
