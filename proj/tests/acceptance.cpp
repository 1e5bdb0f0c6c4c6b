// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 iff all pass.
//
// Usage: acceptance [--quick]
//   --quick shortens the teacher and distillation budgets for a dry run; the
//   efficacy criterion is then reported but cannot be trusted.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <bit>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ldistill/checkpoint.hpp"
#include "ldistill/datagen.hpp"
#include "ldistill/diffusion.hpp"
#include "ldistill/distill.hpp"
#include "ldistill/eval.hpp"
#include "ldistill/lora.hpp"
#include "ldistill/memacct.hpp"

using namespace ldistill;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "ok: " : "FAILED: ") + what);
  }
  void info(const std::string& what) { notes.push_back(what); }
};

int g_failures = 0;

void report(int number, const std::string& title, const std::function<void(Outcome&)>& body) {
  Outcome out;
  const auto start = Clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.require(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  for (const auto& n : out.notes) std::cout << "    " << n << '\n';
  std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << number << ": " << title << " (" << std::fixed
            << std::setprecision(1) << secs << "s)" << std::endl;
  std::cout.unsetf(std::ios::fixed);
  if (!out.pass) ++g_failures;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](double x, double y) {
           return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
         });
}

Tensor uniform_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from_values(std::move(shape), std::move(v), requires_grad);
}

// Largest relative error between analytic and central-difference gradients.
double max_gradient_error(const std::function<Tensor()>& f, std::vector<Tensor> inputs) {
  constexpr double h = 1e-4;
  for (auto& in : inputs) in.clear_grad();
  backpropagate(f());
  double worst = 0.0;
  for (auto& in : inputs) {
    if (!in.has_grad()) return INFINITY;
    const std::vector<double> analytic(in.grad().begin(), in.grad().end());
    auto vals = in.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + h;
      const double up = f().item();
      vals[i] = saved - h;
      const double down = f().item();
      vals[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
      worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
    }
    in.clear_grad();
  }
  return worst;
}

std::vector<std::vector<double>> snapshot(const std::vector<Parameter>& params) {
  std::vector<std::vector<double>> out;
  for (const auto& p : params) out.emplace_back(p.tensor().values().begin(), p.tensor().values().end());
  return out;
}

// ---------------------------------------------------------------------------

void criterion1(Outcome& o) {
  const struct {
    double config, expected;
  } rows[] = {{24.4, -16.2}, {9.6, 54.2}, {10.3, 51.0}};
  for (const auto& r : rows) {
    const double got = saving_ratio(21.0, r.config);
    o.require(std::abs(got - r.expected) <= 0.1,
              "saving_ratio(21.0, " + fmt(r.config) + ") = " + fmt(got) + "% vs " + fmt(r.expected) + "%");
  }
}

void criterion2(Outcome& o, const GmmSpec& spec, const NoiseSchedule& sched) {
  const DenoiserConfig net;
  const auto rows = table_one(net, 8, FootprintModel{});
  o.info(format_memory_table(rows).insert(0, "\n").c_str());
  const auto& base = rows[0];
  const auto& naive = rows[1];
  const auto& lora_distill = rows[3];
  o.require(naive.modeled_bytes > base.modeled_bytes && base.modeled_bytes > lora_distill.modeled_bytes,
            "naive-distill > baseline > lora-distill bytes");
  const double share = static_cast<double>(lora_distill.counts.trainable) / lora_distill.counts.base;
  o.require(share < 0.15, "lora-distill trainable share " + fmt(100.0 * share) + "% < 15%");
  o.require(lora_distill.counts.duplicated == 0, "lora-distill duplicates no base parameters");

  // Census against the analytic row at every held-out evaluation of a real run.
  Denoiser model(net, 17);
  DistillConfig cfg;
  cfg.steps = 60;
  cfg.eval_every = 20;
  cfg.probe_size = 256;
  std::size_t checks = 0;
  std::vector<std::string> problems;
  const auto result = run_distillation(model, spec, sched, cfg, [&](const Denoiser& m, std::size_t step) {
    ++checks;
    for (const auto& p : census_mismatches(live_param_census(m), lora_distill, true)) {
      problems.push_back("step " + std::to_string(step) + ": " + p);
    }
  });
  for (const auto& p : problems) o.info(p);
  o.require(checks == 4 && problems.empty(),
            "live census == analytic counts at " + std::to_string(checks) + " checkpoints of a distillation run");
  o.require(result.parameter_allocations == 2 * result.adapted_layers,
            std::to_string(result.parameter_allocations) + " parameter allocations during the run, all adapter factors");
}

void criterion3(Outcome& o, const Denoiser& model, const NoiseSchedule& sched) {
  const auto teacher = sample(teacher_predictor(model, {3.0}), sched, 16, 2, 1, 5, SamplerMode::Deterministic, 50);
  const auto student = sample(student_predictor(model), sched, 16, 2, 1, 5, SamplerMode::Deterministic, 50);
  const auto teacher_a = sample(teacher_predictor(model, {3.0}), sched, 16, 2, 1, 5, SamplerMode::Ancestral, 50);
  const auto student_a = sample(student_predictor(model), sched, 16, 2, 1, 5, SamplerMode::Ancestral, 50);
  o.require(teacher.nfe == 100 && teacher_a.nfe == 100, "teacher NFE " + std::to_string(teacher.nfe) + " == 100");
  o.require(student.nfe == 50 && student_a.nfe == 50, "student NFE " + std::to_string(student.nfe) + " == 50");
}

void criterion4(Outcome& o, const Denoiser& model, const NoiseSchedule& sched) {
  // Best of several alternating runs, so one scheduling hiccup cannot decide.
  double teacher = INFINITY, student = INFINITY;
  for (int rep = 0; rep < 5; ++rep) {
    teacher = std::min(teacher, sample(teacher_predictor(model, {3.0}), sched, 256, 2, 1, 100 + rep,
                                       SamplerMode::Deterministic, 50)
                                    .wall_clock_s);
    student = std::min(student, sample(student_predictor(model), sched, 256, 2, 1, 100 + rep,
                                       SamplerMode::Deterministic, 50)
                                    .wall_clock_s);
  }
  const double ratio = student / teacher;
  o.info("teacher " + fmt(teacher) + "s, student " + fmt(student) + "s (batch 256, 50 steps, best of 5)");
  o.require(ratio <= 0.65, "student/teacher wall-clock " + fmt(ratio) + " <= 0.65");
}

void criterion5(Outcome& o) {
  std::mt19937_64 rng(5);
  const auto u = uniform_tensor({64, 2}, rng, false);
  const auto c = uniform_tensor({64, 2}, rng, false);
  const auto at0 = guidance_combine(u, c, {0.0});
  const auto at1 = guidance_combine(u, c, {1.0});
  o.require(bitwise_equal(at0.values(), u.values()), "combine(u, c, 0) == u bitwise");
  o.require(bitwise_equal(at1.values(), c.values()), "combine(u, c, 1) == c bitwise");

  // Dyadic values with few significant bits, so both sides are exact in
  // binary floating point and equality is a true test of affinity.
  std::uniform_int_distribution<int> grid(-64, 64);
  std::uniform_int_distribution<int> sgrid(0, 128);
  std::size_t exact = 0;
  for (int i = 0; i < 1000; ++i) {
    const double uv = grid(rng) / 16.0, cv = grid(rng) / 16.0, s = sgrid(rng) / 16.0;
    const double combined =
        guidance_combine(Tensor::from_values({1, 1}, {uv}), Tensor::from_values({1, 1}, {cv}), {s}).item();
    exact += (combined - uv == s * (cv - uv)) ? 1 : 0;
  }
  o.require(exact == 1000, "affinity combine(u, c, s) - u == s (c - u) exact on " + std::to_string(exact) +
                               "/1000 random triples");
}

void criterion6(Outcome& o, const fs::path& teacher_manifest, const GmmSpec& spec, const NoiseSchedule& sched) {
  auto loaded = load_teacher(teacher_manifest);
  Denoiser& model = loaded.model;
  const auto probe = make_probe_set(spec, sched, 1024, 606);
  const auto before = predict_noise(model, probe.x_t, probe.t, probe.y);
  attach_adapters(model, 8, 8.0, admissible_layers(model.config(), 8), 6);
  model.freeze_base();
  const auto after = predict_noise(model, probe.x_t, probe.t, probe.y);
  o.require(bitwise_equal(before.values(), after.values()), "output after attaching adapters is bitwise-unchanged");

  const std::vector<Label> nulls(probe.size(), std::nullopt);
  const auto cond = model.forward(probe.x_t, probe.t, probe.y, AdapterMode::Bypass);
  const auto uncond = model.forward(probe.x_t, probe.t, nulls, AdapterMode::Bypass);
  const double gap = mse(cond, uncond, Reduction::MeanRows).item();
  double worst = 0.0;
  for (double s : {0.0, 2.0, 3.0, 5.0}) {
    const double loss = distill_loss(model, probe, {s}).item();
    const double closed = (s - 1.0) * (s - 1.0) * gap;
    worst = std::max(worst, std::abs(loss - closed) / std::max(std::abs(closed), 1e-300));
  }
  o.require(worst <= 1e-10, "initial loss vs (s-1)^2 mean||eps_c - eps_u||^2: max relative error " + fmt(worst));
  const double at1 = distill_loss(model, probe, {1.0}).item();
  o.require(at1 == 0.0, "initial loss at s = 1 is " + fmt(at1));
}

void criterion7(Outcome& o, const fs::path& teacher_manifest, const GmmSpec& spec, const NoiseSchedule& sched,
                bool quick) {
  auto loaded = load_teacher(teacher_manifest);
  Denoiser& model = loaded.model;
  const auto base_before = snapshot(model.base_parameters());

  DistillConfig cfg;  // s = 3, r = 8, 20000 steps
  if (quick) cfg.steps = 500;
  const auto result = run_distillation(model, spec, sched, cfg);
  for (const auto& r : result.log.records()) {
    std::ostringstream line;
    line << "step " << r.step << "  loss " << std::setprecision(5) << r.loss << "  agreement " << r.agreement_mse
         << "  t " << std::setprecision(4) << r.elapsed_s << "s";
    o.info(line.str());
  }
  const double ratio = result.final_agreement / result.initial_agreement;
  o.require(ratio <= 0.1, "held-out agreement " + fmt(result.initial_agreement) + " -> " +
                              fmt(result.final_agreement) + " (ratio " + fmt(ratio) + " <= 0.1) after " +
                              std::to_string(result.losses.size()) + " steps at s = " + fmt(cfg.guidance) +
                              ", r = " + std::to_string(cfg.rank));

  const auto base_after = model.base_parameters();
  bool unchanged = base_after.size() == base_before.size();
  for (std::size_t i = 0; unchanged && i < base_after.size(); ++i) {
    unchanged = bitwise_equal(base_after[i].tensor().values(), base_before[i]);
  }
  o.require(unchanged, "every base weight bitwise-unchanged");

  if (result.losses.size() >= 10000) {
    auto window = [&](std::size_t end) {
      double s = 0.0;
      for (std::size_t i = end - 100; i < end; ++i) s += result.losses[i];
      return s / 100.0;
    };
    o.info("smoothed loss at step 100: " + fmt(window(100)) + ", at step 10000: " + fmt(window(10000)));
  }

  const auto eval = evaluate(model, spec, sched, {cfg.guidance}, EvalOptions{});
  std::istringstream summary(eval.summary());
  for (std::string line; std::getline(summary, line);) o.info(line);
  o.require(eval.all_finite(), "all evaluation metrics finite");
  o.require(eval.quality_preserved(),
            "energy(student, teacher) <= 1.5 x energy(teacher, teacher) for every class (n = 2000, 50 "
            "deterministic steps)");
}

void criterion8(Outcome& o, const GmmSpec& spec, const NoiseSchedule& sched) {
  double worst = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    auto a = uniform_tensor({3, 4}, rng, true), b = uniform_tensor({4, 5}, rng, true);
    auto w = uniform_tensor({5, 4}, rng, true), row = uniform_tensor({1, 5}, rng, true);
    auto s = uniform_tensor({1}, rng, true), table = uniform_tensor({4, 2}, rng, true);
    auto t35 = uniform_tensor({3, 5}, rng, false), t37 = uniform_tensor({3, 7}, rng, false);
    const std::vector<std::size_t> idx{3, 0, 3};
    worst = std::max(worst, max_gradient_error([&] { return mse(matmul(a, b), t35); }, {a, b}));
    worst = std::max(worst, max_gradient_error([&] { return mse(matmul(a, w, Transpose::Yes), t35); }, {a, w}));
    worst = std::max(worst, max_gradient_error([&] { return mse(add(add(matmul(a, b), row), s), t35); }, {a, b, row, s}));
    worst = std::max(worst, max_gradient_error([&] { return mse(mul(silu(matmul(a, b)), s), t35, Reduction::MeanRows); },
                                               {a, b, s}));
    worst = std::max(worst, max_gradient_error(
                                [&] { return mse(concat(mul(matmul(a, b), matmul(a, b)), embedding(table, idx)), t37); },
                                {a, b, table}));

    // The whole denoiser with adapters, every parameter unfrozen.
    DenoiserConfig net;
    net.hidden_width = 8;
    net.num_blocks = 1;
    net.time_embed_dim = 4;
    net.cond_embed_dim = 4;
    Denoiser model(net, static_cast<std::uint64_t>(seed));
    attach_adapters(model, 2, 2.0, admissible_layers(net, 2), static_cast<std::uint64_t>(seed) + 1);
    for (auto& p : model.adapter_parameters()) {
      for (auto& v : p.tensor().mutable_values()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    }
    model.freeze_base(false);
    const auto x = uniform_tensor({3, 2}, rng, false), target = uniform_tensor({3, 2}, rng, false);
    const std::vector<std::size_t> ts{1, 100, 200};
    const std::vector<Label> ys{2, std::nullopt, 4};
    std::vector<Tensor> leaves;
    for (const auto& p : model.parameters()) leaves.push_back(p.tensor());
    worst = std::max(worst, max_gradient_error(
                                [&] { return mse(model.forward(x, ts, ys, AdapterMode::Active), target); }, leaves));
  }
  o.require(worst < 1e-4, "max relative gradient error over 20 seeds: " + fmt(worst) + " < 1e-4");

  // Frozen parameters through real distillation steps.
  DenoiserConfig net;
  net.hidden_width = 32;
  net.num_blocks = 2;
  Denoiser model(net, 8);
  attach_adapters(model, 8, 8.0, admissible_layers(net, 8), 9);
  model.freeze_base();
  auto trainable = trainable_parameters(model);
  AdamState adam;
  std::mt19937_64 rng(10);
  bool clean = true, finite = true;
  for (int step = 0; step < 25; ++step) {
    const auto batch = make_noised_batch(spec, sched, 64, rng);
    backpropagate(distill_loss(model, batch, {3.0}));
    for (const auto& p : model.base_parameters()) clean = clean && !p.tensor().has_grad();
    for (const auto& p : model.adapter_parameters()) {
      finite = finite && p.tensor().has_grad();
      if (p.tensor().has_grad()) {
        for (double g : p.tensor().grad()) finite = finite && std::isfinite(g);
      }
    }
    adam_update(trainable, adam);
  }
  for (const auto& p : model.base_parameters()) clean = clean && !adam.has_state(p.name());
  o.require(clean, "frozen parameters hold no gradient and no optimizer state over 25 steps");
  o.require(finite, "every adapter factor has a finite gradient after each backward pass");
  o.require(adam.tracked_parameters() == model.adapter_parameters().size(),
            "optimizer tracks exactly the " + std::to_string(model.adapter_parameters().size()) + " adapter factors");
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::string(argv[1]) == "--quick";
  const auto spec = default_gmm();
  const auto sched = make_schedule(200, 1e-4, 0.02);

  std::cout << "training teacher" << (quick ? " (quick mode)" : "") << "..." << std::endl;
  TeacherTrainConfig tcfg;
  if (quick) tcfg.steps = 500;
  const auto teacher = train_teacher(spec, DenoiserConfig{}, sched, tcfg);
  std::cout << "    teacher loss " << teacher.initial_loss() << " -> " << teacher.final_loss() << " over "
            << teacher.losses.size() << " steps" << std::endl;
  const fs::path dir = fs::temp_directory_path() / ("ldistill_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const fs::path manifest = dir / "teacher.manifest";
  save_teacher(teacher.model, sched, manifest);

  report(1, "saving-ratio arithmetic", criterion1);
  report(2, "memory table structure and live census", [&](Outcome& o) { criterion2(o, spec, sched); });

  auto student = load_teacher(manifest);
  attach_adapters(student.model, 8, 8.0, admissible_layers(student.model.config(), 8), 3);
  student.model.freeze_base();
  for (auto& p : student.model.adapter_parameters()) {
    for (auto& v : p.tensor().mutable_values()) v = 0.01;
  }
  report(3, "NFE halving at 50 steps", [&](Outcome& o) { criterion3(o, student.model, sched); });
  report(4, "inference-time reduction", [&](Outcome& o) { criterion4(o, student.model, sched); });
  report(5, "guidance identities", criterion5);
  report(6, "zero-init distillation identities", [&](Outcome& o) { criterion6(o, manifest, spec, sched); });
  report(7, "distillation efficacy", [&](Outcome& o) { criterion7(o, manifest, spec, sched, quick); });
  report(8, "numerical hygiene", [&](Outcome& o) { criterion8(o, spec, sched); });

  fs::remove_all(dir);
  std::cout << (g_failures == 0 ? "ALL CRITERIA PASS" : std::to_string(g_failures) + " CRITERIA FAILED") << std::endl;
  return g_failures == 0 ? 0 : 1;
}
