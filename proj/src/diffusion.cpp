#include "ldistill/diffusion.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>

#include "ldistill/error.hpp"

namespace ldistill {

double NoiseSchedule::alpha_bar_at(std::size_t t) const {
  if (t == 0) return 1.0;
  if (t > steps) {
    fail(ErrorKind::InvalidArgument, "step " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
  }
  return alpha_bar[t - 1];
}

NoiseSchedule make_schedule(std::size_t steps, double beta_min, double beta_max) {
  if (steps < 1) fail(ErrorKind::InvalidArgument, "make_schedule: need at least one step");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    fail(ErrorKind::InvalidArgument, "make_schedule: need 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps > 1 ? static_cast<double>(i) / static_cast<double>(steps - 1) : 0.0;
    s.beta[i] = beta_min + frac * (beta_max - beta_min);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

Tensor q_sample(const Tensor& x0, std::span<const std::size_t> t, const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) {
    fail(ErrorKind::Shape, "q_sample: x0 " + shape_string(x0.shape()) + " vs eps " + shape_string(eps.shape()));
  }
  if (t.size() != x0.rows()) fail(ErrorKind::Shape, "q_sample: one step index per row required");
  std::vector<double> out(x0.numel());
  const auto xv = x0.values();
  const auto ev = eps.values();
  const std::size_t cols = x0.cols();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 1 || t[i] > sched.steps) {
      fail(ErrorKind::InvalidArgument,
           "q_sample: step " + std::to_string(t[i]) + " outside [1, " + std::to_string(sched.steps) + "]");
    }
    const double ab = sched.alpha_bar[t[i] - 1];
    const double a = std::sqrt(ab);
    const double b = std::sqrt(1.0 - ab);
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = a * xv[i * cols + j] + b * ev[i * cols + j];
  }
  return Tensor::from_values(x0.shape(), std::move(out));
}

NoisedBatch make_noised_batch(const GmmSpec& spec, const NoiseSchedule& sched, std::size_t n, std::mt19937_64& rng) {
  const auto data = sample_labeled(spec, n, rng);
  std::uniform_int_distribution<std::size_t> step(1, sched.steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  NoisedBatch batch;
  std::vector<double> x0(n * 2);
  std::vector<double> eps(n * 2);
  batch.t.resize(n);
  batch.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    x0[2 * i] = data[i].x0[0];
    x0[2 * i + 1] = data[i].x0[1];
    batch.y[i] = data[i].y;
    batch.t[i] = step(rng);
    eps[2 * i] = normal(rng);
    eps[2 * i + 1] = normal(rng);
  }
  batch.eps = Tensor::from_values({n, 2}, std::move(eps));
  batch.x_t = q_sample(Tensor::from_values({n, 2}, std::move(x0)), batch.t, batch.eps, sched);
  return batch;
}

Tensor guidance_combine(const Tensor& eps_uncond, const Tensor& eps_cond, GuidanceSpec guidance) {
  if (eps_uncond.shape() != eps_cond.shape()) {
    fail(ErrorKind::Shape, "guidance_combine: shapes " + shape_string(eps_uncond.shape()) + " and " +
                               shape_string(eps_cond.shape()) + " differ");
  }
  if (!std::isfinite(guidance.s)) fail(ErrorKind::InvalidArgument, "guidance_combine: non-finite guidance");
  const auto u = eps_uncond.values();
  const auto c = eps_cond.values();
  std::vector<double> out(u.size());
  // std::lerp is exact at both endpoints, which plain u + s (c - u) is not.
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = std::lerp(u[i], c[i], guidance.s);
  return Tensor::from_values(eps_uncond.shape(), std::move(out));
}

Tensor teacher_predict(const Denoiser& model, const Tensor& x_t, std::span<const std::size_t> t,
                       std::span<const Label> y, GuidanceSpec guidance, NfeCounter& nfe) {
  NoGradGuard no_grad;
  const Tensor cond = model.forward(x_t, t, y, AdapterMode::Bypass);
  nfe.record(1);
  const std::vector<Label> null_labels(y.size(), std::nullopt);
  const Tensor uncond = model.forward(x_t, t, null_labels, AdapterMode::Bypass);
  nfe.record(1);
  return guidance_combine(uncond, cond, guidance);
}

Tensor student_predict(const Denoiser& model, const Tensor& x_t, std::span<const std::size_t> t,
                       std::span<const Label> y, NfeCounter& nfe) {
  Tensor out = model.forward(x_t, t, y, AdapterMode::Active);
  nfe.record(1);
  return out;
}

Predictor teacher_predictor(const Denoiser& model, GuidanceSpec guidance) {
  return [&model, guidance](const Tensor& x, std::span<const std::size_t> t, std::span<const Label> y,
                            NfeCounter& nfe) { return teacher_predict(model, x, t, y, guidance, nfe); };
}

Predictor student_predictor(const Denoiser& model) {
  return [&model](const Tensor& x, std::span<const std::size_t> t, std::span<const Label> y, NfeCounter& nfe) {
    return student_predict(model, x, t, y, nfe);
  };
}

std::string to_string(SamplerMode mode) { return mode == SamplerMode::Ancestral ? "ancestral" : "deterministic"; }

SamplerMode parse_sampler_mode(const std::string& text) {
  if (text == "ancestral") return SamplerMode::Ancestral;
  if (text == "deterministic") return SamplerMode::Deterministic;
  fail(ErrorKind::InvalidArgument, "unknown sampler mode '" + text + "' (expected ancestral or deterministic)");
}

std::vector<std::size_t> sampling_timesteps(std::size_t schedule_steps, std::size_t sampling_steps) {
  if (sampling_steps < 1 || sampling_steps > schedule_steps) {
    fail(ErrorKind::InvalidArgument, "sampling steps must lie in [1, " + std::to_string(schedule_steps) + "], got " +
                                         std::to_string(sampling_steps));
  }
  std::vector<std::size_t> out;
  out.reserve(sampling_steps);
  for (std::size_t k = sampling_steps; k >= 1; --k) out.push_back(k * schedule_steps / sampling_steps);
  return out;
}

SampleRun sample(const Predictor& predictor, const NoiseSchedule& sched, std::size_t n, std::size_t data_dim,
                 Label y, std::uint64_t seed, SamplerMode mode, std::size_t steps) {
  if (n == 0) fail(ErrorKind::InvalidArgument, "sample: n must be positive");
  const auto start = std::chrono::steady_clock::now();
  NoGradGuard no_grad;
  const auto timesteps = sampling_timesteps(sched.steps, steps);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<double> x(n * data_dim);
  for (auto& v : x) v = normal(rng);
  const std::vector<Label> labels(n, y);
  NfeCounter nfe;

  for (std::size_t k = 0; k < timesteps.size(); ++k) {
    const std::size_t t = timesteps[k];
    const std::size_t t_prev = k + 1 < timesteps.size() ? timesteps[k + 1] : 0;
    const double ab = sched.alpha_bar_at(t);
    const double ab_prev = sched.alpha_bar_at(t_prev);
    const std::vector<std::size_t> ts(n, t);
    const Tensor eps = predictor(Tensor::from_values({n, data_dim}, x), ts, labels, nfe);
    const auto e = eps.values();

    double sigma = 0.0;
    if (mode == SamplerMode::Ancestral) {
      sigma = std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev));
    }
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double x0_hat = (x[i] - std::sqrt(1.0 - ab) * e[i]) / std::sqrt(ab);
      x[i] = std::sqrt(ab_prev) * x0_hat + dir * e[i];
    }
    if (sigma > 0.0) {
      for (auto& v : x) v += sigma * normal(rng);
    }
  }
  SampleRun run;
  run.samples = Tensor::from_values({n, data_dim}, std::move(x));
  run.nfe = nfe.count();
  run.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return run;
}

void write_samples(std::ostream& out, const Tensor& samples, Label y) {
  out << std::setprecision(17);
  const auto v = samples.values();
  const std::size_t cols = samples.cols();
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    for (std::size_t j = 0; j < cols; ++j) out << v[i * cols + j] << ' ';
    out << y.value_or(0) << '\n';
  }
}

void write_benchmark_csv(std::ostream& out, std::span<const BenchmarkRow> rows) {
  out << "mode,steps,nfe,wall_clock_s\n";
  out << std::setprecision(9);
  for (const auto& r : rows) out << r.mode << ',' << r.steps << ',' << r.nfe << ',' << r.wall_clock_s << '\n';
}

}  // namespace ldistill
