// Command-line front end over the ldistill C API.
//
// Exit codes: 0 success, 1 runtime or assertion failure, 2 usage/config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "ldistill/c_api.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct ConfigDeleter {
  void operator()(ld_config* c) const { ld_config_free(c); }
};
struct ModelDeleter {
  void operator()(ld_model* m) const { ld_model_free(m); }
};
struct StringDeleter {
  void operator()(char* s) const { ld_string_free(s); }
};
using ConfigPtr = std::unique_ptr<ld_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<ld_model, ModelDeleter>;
using StringPtr = std::unique_ptr<char, StringDeleter>;

// Thrown to unwind out of a subcommand with a specific exit code.
struct Exit {
  int code;
};

int exit_code_for(ld_status s) {
  return (s == LD_ERR_CONFIG || s == LD_ERR_INVALID_ARGUMENT) ? kExitUsage : kExitRuntime;
}

void check(ld_status s, const std::string& context) {
  if (s == LD_OK) return;
  std::cerr << "error: " << context << ": " << ld_last_error() << " (" << ld_status_string(s) << ")\n";
  throw Exit{exit_code_for(s)};
}

ConfigPtr load_config(const std::string& path) {
  ld_config* raw = nullptr;
  if (path.empty()) {
    check(ld_config_default(&raw), "default config");
  } else {
    check(ld_config_load(path.c_str(), &raw), "config " + path);
  }
  return ConfigPtr(raw);
}

ModelPtr load_teacher(const std::string& path) {
  ld_model* raw = nullptr;
  check(ld_model_load_teacher(path.c_str(), &raw), "teacher " + path);
  return ModelPtr(raw);
}

void load_adapters(ld_model* model, const std::string& path) {
  check(ld_model_load_adapters(model, path.c_str()), "adapters " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    std::cerr << "error: cannot create output directory " << dir << ": " << ec.message() << '\n';
    throw Exit{kExitRuntime};
  }
}

void ensure_parent(const std::string& file) {
  const auto parent = fs::path(file).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

ld_sampler_mode parse_mode(const std::string& text) {
  if (text == "ancestral") return LD_SAMPLER_ANCESTRAL;
  if (text == "deterministic") return LD_SAMPLER_DETERMINISTIC;
  std::cerr << "error: --mode must be 'ancestral' or 'deterministic', got '" << text << "'\n";
  throw Exit{kExitUsage};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LoRA-enhanced distillation of classifier-free guided diffusion"};
  app.require_subcommand(1);

  // train-teacher
  std::string tt_config, tt_out;
  auto* train = app.add_subcommand("train-teacher", "Train the guided teacher with condition dropout");
  train->add_option("--config", tt_config, "Run config file")->required();
  train->add_option("--out", tt_out, "Output directory")->required();

  // distill
  std::string d_teacher, d_config, d_out;
  auto* distill = app.add_subcommand("distill", "Distill the two-pass teacher into LoRA adapters");
  distill->add_option("--teacher", d_teacher, "Teacher manifest")->required();
  distill->add_option("--config", d_config, "Run config file")->required();
  distill->add_option("--out", d_out, "Output directory")->required();

  // sample
  std::string s_teacher, s_adapters, s_out, s_mode = "deterministic";
  int s_class = 1;
  std::uint64_t s_n = 1000, s_steps = 50, s_seed = 0;
  double s_guidance = -1.0;
  auto* samp = app.add_subcommand("sample", "Draw samples with the teacher (two passes) or the student (one pass)");
  samp->add_option("--teacher", s_teacher, "Teacher manifest")->required();
  samp->add_option("--adapters", s_adapters, "Adapter manifest; selects student sampling");
  samp->add_option("--class", s_class, "Class label (0 = null condition)")->required();
  samp->add_option("--n", s_n, "Number of samples")->required();
  samp->add_option("--steps", s_steps, "Denoising iterations")->capture_default_str();
  samp->add_option("--mode", s_mode, "ancestral | deterministic")->capture_default_str();
  samp->add_option("--seed", s_seed, "Sampler seed")->required();
  samp->add_option("--guidance", s_guidance, "Guidance weight s (teacher sampling)");
  samp->add_option("--out", s_out, "Output sample file")->required();

  // benchmark
  std::string b_teacher, b_adapters, b_out;
  std::uint64_t b_n = 256, b_steps = 50, b_seed = 0;
  int b_class = 1;
  auto* bench = app.add_subcommand("benchmark", "Time teacher vs student sampling at equal step count");
  bench->add_option("--teacher", b_teacher, "Teacher manifest")->required();
  bench->add_option("--adapters", b_adapters, "Adapter manifest")->required();
  bench->add_option("--n", b_n, "Batch size")->capture_default_str();
  bench->add_option("--steps", b_steps, "Denoising iterations")->capture_default_str();
  bench->add_option("--class", b_class, "Class label")->capture_default_str();
  bench->add_option("--seed", b_seed, "Sampler seed")->capture_default_str();
  bench->add_option("--out", b_out, "CSV output (mode,steps,nfe,wall_clock_s)")->required();

  // report-memory
  std::string m_config, m_csv;
  std::vector<std::string> m_live;
  auto* mem = app.add_subcommand("report-memory", "Four-configuration memory table");
  mem->add_option("--config", m_config, "Run config file")->required();
  mem->add_option("--live", m_live, "TEACHER ADAPTERS: also census a loaded model")->expected(2);
  mem->add_option("--csv", m_csv, "Also write the table as CSV");

  // eval
  std::string e_teacher, e_adapters, e_out, e_config;
  double e_guidance = 0.0;
  auto* ev = app.add_subcommand("eval", "Compare student against teacher; exit 0 iff quality is preserved");
  ev->add_option("--teacher", e_teacher, "Teacher manifest")->required();
  ev->add_option("--adapters", e_adapters, "Adapter manifest")->required();
  ev->add_option("--guidance", e_guidance, "Guidance weight s")->required();
  ev->add_option("--config", e_config, "Run config file (eval.* settings)");
  ev->add_option("--out", e_out, "CSV report path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) {
      auto cfg = load_config(tt_config);
      ensure_dir(tt_out);
      ld_model* raw = nullptr;
      ld_train_summary summary{};
      const auto log = (fs::path(tt_out) / "teacher_log.csv").string();
      check(ld_train_teacher(cfg.get(), log.c_str(), &raw, &summary), "train-teacher");
      ModelPtr model(raw);
      const auto manifest = (fs::path(tt_out) / "teacher.manifest").string();
      check(ld_model_save_teacher(model.get(), manifest.c_str()), "save teacher");
      std::printf("teacher: %s\nsteps: %llu\ninitial_loss: %.6f\nfinal_loss: %.6f\n", manifest.c_str(),
                  static_cast<unsigned long long>(summary.steps), summary.initial_loss, summary.final_loss);
    } else if (*distill) {
      auto cfg = load_config(d_config);
      auto model = load_teacher(d_teacher);
      check(ld_model_check_config(model.get(), cfg.get()), "distill");
      ensure_dir(d_out);
      ld_distill_summary summary{};
      const auto log = (fs::path(d_out) / "distill_log.csv").string();
      check(ld_distill(model.get(), cfg.get(), log.c_str(), &summary), "distill");
      const auto manifest = (fs::path(d_out) / "adapters.manifest").string();
      check(ld_model_save_adapters(model.get(), manifest.c_str()), "save adapters");
      std::printf("adapters: %s\nguidance_s: %g\nadapted_layers: %llu\ntrainable_params: %llu\n"
                  "initial_agreement_mse: %.6g\nfinal_agreement_mse: %.6g\n",
                  manifest.c_str(), summary.guidance, static_cast<unsigned long long>(summary.adapted_layers),
                  static_cast<unsigned long long>(summary.trainable_params), summary.initial_agreement_mse,
                  summary.final_agreement_mse);
      if (summary.trainable_params != summary.expected_adapter_params) {
        std::cerr << "error: trainable count " << summary.trainable_params << " != closed-form adapter count "
                  << summary.expected_adapter_params << '\n';
        return kExitRuntime;
      }
    } else if (*samp) {
      auto model = load_teacher(s_teacher);
      ld_sample_options opts{};
      opts.label = s_class;
      opts.n = s_n;
      opts.steps = s_steps;
      opts.mode = parse_mode(s_mode);
      opts.seed = s_seed;
      if (!s_adapters.empty()) {
        load_adapters(model.get(), s_adapters);
        opts.use_adapters = 1;
      } else {
        if (s_guidance < 0.0) {
          std::cerr << "error: teacher sampling requires --guidance s (s >= 0)\n";
          return kExitUsage;
        }
        opts.guidance = s_guidance;
      }
      ensure_parent(s_out);
      ld_sample_summary summary{};
      check(ld_sample(model.get(), &opts, s_out.c_str(), &summary), "sample");
      std::printf("predictor: %s\nsteps: %llu\nnfe: %llu\nwall_clock_s: %.6f\n", opts.use_adapters ? "student" : "teacher",
                  static_cast<unsigned long long>(s_steps), static_cast<unsigned long long>(summary.nfe),
                  summary.wall_clock_s);
    } else if (*bench) {
      auto model = load_teacher(b_teacher);
      load_adapters(model.get(), b_adapters);
      double guidance = 0.0;
      check(ld_model_guidance(model.get(), &guidance), "benchmark");
      ld_sample_options opts{b_class, b_n, b_steps, LD_SAMPLER_DETERMINISTIC, b_seed, 0, guidance};
      ld_sample_summary teacher{}, student{};
      check(ld_sample(model.get(), &opts, nullptr, &teacher), "teacher sampling");
      opts.use_adapters = 1;
      check(ld_sample(model.get(), &opts, nullptr, &student), "student sampling");
      ensure_parent(b_out);
      std::ofstream out(b_out);
      out << "mode,steps,nfe,wall_clock_s\n"
          << "teacher," << b_steps << ',' << teacher.nfe << ',' << teacher.wall_clock_s << '\n'
          << "student," << b_steps << ',' << student.nfe << ',' << student.wall_clock_s << '\n';
      if (!out) {
        std::cerr << "error: cannot write " << b_out << '\n';
        return kExitRuntime;
      }
      std::printf("teacher nfe %llu  %.4fs\nstudent nfe %llu  %.4fs\nratio %.3f\n",
                  static_cast<unsigned long long>(teacher.nfe), teacher.wall_clock_s,
                  static_cast<unsigned long long>(student.nfe), student.wall_clock_s,
                  student.wall_clock_s / teacher.wall_clock_s);
    } else if (*mem) {
      auto cfg = load_config(m_config);
      ModelPtr live;
      if (!m_live.empty()) {
        live = load_teacher(m_live[0]);
        load_adapters(live.get(), m_live[1]);
      }
      char* text = nullptr;
      char* csv = nullptr;
      const ld_status s = ld_report_memory(cfg.get(), live.get(), &text, &csv);
      StringPtr text_owner(text), csv_owner(csv);
      if (text) std::fputs(text, stdout);
      if (csv && !m_csv.empty()) {
        ensure_parent(m_csv);
        std::ofstream out(m_csv);
        out << csv;
      }
      check(s, "report-memory");
    } else if (*ev) {
      auto cfg = load_config(e_config);
      auto model = load_teacher(e_teacher);
      load_adapters(model.get(), e_adapters);
      ensure_parent(e_out);
      ld_eval_summary summary{};
      char* text = nullptr;
      const ld_status s = ld_eval(model.get(), cfg.get(), e_guidance, e_out.c_str(), &summary, &text);
      StringPtr text_owner(text);
      if (text) std::fputs(text, stdout);
      if (s == LD_ERR_CRITERION) {
        std::cerr << "quality-preservation criterion failed\n";
        return kExitRuntime;
      }
      check(s, "eval");
    }
  } catch (const Exit& e) {
    return e.code;
  }
  return kExitOk;
}
