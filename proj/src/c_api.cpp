#include "ldistill/c_api.h"

#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include "ldistill/checkpoint.hpp"
#include "ldistill/config.hpp"
#include "ldistill/distill.hpp"
#include "ldistill/error.hpp"
#include "ldistill/eval.hpp"
#include "ldistill/lora.hpp"
#include "ldistill/memacct.hpp"

struct ld_config {
  ldistill::RunConfig value;
};

struct ld_model {
  std::unique_ptr<ldistill::Denoiser> model;
  ldistill::NoiseSchedule schedule;
  std::optional<double> guidance;
};

namespace {

thread_local std::string g_last_error;

ld_status status_for(ldistill::ErrorKind kind) {
  using ldistill::ErrorKind;
  switch (kind) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::Shape:
      return LD_ERR_INVALID_ARGUMENT;
    case ErrorKind::Config:
      return LD_ERR_CONFIG;
    case ErrorKind::Io:
      return LD_ERR_IO;
    case ErrorKind::Mismatch:
      return LD_ERR_MISMATCH;
    case ErrorKind::Numeric:
      return LD_ERR_NUMERIC;
  }
  return LD_ERR_INTERNAL;
}

ld_status set_error(ld_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename Fn>
ld_status guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const ldistill::Error& e) {
    return set_error(status_for(e.kind()), e.what());
  } catch (const std::exception& e) {
    return set_error(LD_ERR_INTERNAL, e.what());
  }
}

#define LD_REQUIRE(cond, what) \
  if (!(cond)) return set_error(LD_ERR_INVALID_ARGUMENT, what)

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void write_text_file(const char* path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) ldistill::fail(ldistill::ErrorKind::Io, std::string("cannot write ") + path);
}

const ldistill::RunConfig& validated(const ld_config& config) {
  config.value.validate();
  return config.value;
}

void check_model_config(const ld_model& m, const ldistill::RunConfig& cfg) {
  const auto& have = m.model->config();
  const auto& want = cfg.net;
  std::ostringstream diff;
  auto cmp = [&](const char* key, std::size_t a, std::size_t b) {
    if (a != b) diff << ' ' << key << " (checkpoint " << a << ", config " << b << ")";
  };
  cmp("net.data_dim", have.data_dim, want.data_dim);
  cmp("net.hidden_width", have.hidden_width, want.hidden_width);
  cmp("net.num_blocks", have.num_blocks, want.num_blocks);
  cmp("net.time_embed_dim", have.time_embed_dim, want.time_embed_dim);
  cmp("net.cond_embed_dim", have.cond_embed_dim, want.cond_embed_dim);
  cmp("net.num_classes", have.num_classes, want.num_classes);
  cmp("schedule.steps", m.schedule.steps, cfg.schedule.steps);
  if (m.schedule.beta.front() != cfg.schedule.beta_min || m.schedule.beta.back() != cfg.schedule.beta_max) {
    diff << " schedule.beta_min/beta_max";
  }
  if (!diff.str().empty()) {
    ldistill::fail(ldistill::ErrorKind::Mismatch, "teacher checkpoint does not match config:" + diff.str());
  }
}

}  // namespace

extern "C" {

const char* ld_last_error(void) { return g_last_error.c_str(); }

const char* ld_status_string(ld_status status) {
  switch (status) {
    case LD_OK:
      return "ok";
    case LD_ERR_INVALID_ARGUMENT:
      return "invalid argument";
    case LD_ERR_CONFIG:
      return "configuration error";
    case LD_ERR_IO:
      return "i/o error";
    case LD_ERR_MISMATCH:
      return "mismatch";
    case LD_ERR_NUMERIC:
      return "numeric failure";
    case LD_ERR_CRITERION:
      return "criterion not met";
    case LD_ERR_INTERNAL:
      return "internal error";
  }
  return "unknown status";
}

void ld_string_free(char* s) { delete[] s; }

ld_status ld_config_default(ld_config** out) {
  LD_REQUIRE(out, "ld_config_default: null output");
  return guarded([&] {
    *out = new ld_config{};
    return LD_OK;
  });
}

ld_status ld_config_load(const char* path, ld_config** out) {
  LD_REQUIRE(path && out, "ld_config_load: null argument");
  return guarded([&] {
    auto cfg = std::make_unique<ld_config>(ld_config{ldistill::load_run_config(path)});
    *out = cfg.release();
    return LD_OK;
  });
}

ld_status ld_config_set(ld_config* config, const char* key, const char* value) {
  LD_REQUIRE(config && key && value, "ld_config_set: null argument");
  return guarded([&] {
    // Cross-field checks wait until the config is used, so keys can be set in any order.
    config->value.set(key, value);
    return LD_OK;
  });
}

void ld_config_free(ld_config* config) { delete config; }

ld_status ld_train_teacher(const ld_config* config, const char* log_csv_path, ld_model** out,
                           ld_train_summary* summary) {
  LD_REQUIRE(config && out, "ld_train_teacher: null argument");
  return guarded([&] {
    const auto& cfg = validated(*config);
    auto sched = cfg.make_noise_schedule();
    auto result = ldistill::train_teacher(cfg.data, cfg.net, sched, cfg.teacher);
    if (log_csv_path) {
      std::ostringstream csv;
      result.log.write_csv(csv);
      write_text_file(log_csv_path, csv.str());
    }
    if (summary) {
      summary->steps = result.losses.size();
      summary->initial_loss = result.initial_loss();
      summary->final_loss = result.final_loss();
    }
    *out = new ld_model{std::make_unique<ldistill::Denoiser>(std::move(result.model)), std::move(sched), std::nullopt};
    return LD_OK;
  });
}

ld_status ld_model_save_teacher(const ld_model* model, const char* manifest_path) {
  LD_REQUIRE(model && manifest_path, "ld_model_save_teacher: null argument");
  return guarded([&] {
    ldistill::save_teacher(*model->model, model->schedule, manifest_path);
    return LD_OK;
  });
}

ld_status ld_model_load_teacher(const char* manifest_path, ld_model** out) {
  LD_REQUIRE(manifest_path && out, "ld_model_load_teacher: null argument");
  return guarded([&] {
    auto loaded = ldistill::load_teacher(manifest_path);
    *out = new ld_model{std::make_unique<ldistill::Denoiser>(std::move(loaded.model)), std::move(loaded.schedule),
                        std::nullopt};
    return LD_OK;
  });
}

ld_status ld_model_save_adapters(const ld_model* model, const char* manifest_path) {
  LD_REQUIRE(model && manifest_path, "ld_model_save_adapters: null argument");
  LD_REQUIRE(model->guidance, "ld_model_save_adapters: model carries no adapters");
  return guarded([&] {
    ldistill::save_adapters(*model->model, *model->guidance, manifest_path);
    return LD_OK;
  });
}

ld_status ld_model_load_adapters(ld_model* model, const char* manifest_path) {
  LD_REQUIRE(model && manifest_path, "ld_model_load_adapters: null argument");
  return guarded([&] {
    const auto info = ldistill::load_adapters(*model->model, manifest_path);
    model->guidance = info.guidance_s;
    return LD_OK;
  });
}

void ld_model_free(ld_model* model) { delete model; }

ld_status ld_model_check_config(const ld_model* model, const ld_config* config) {
  LD_REQUIRE(model && config, "ld_model_check_config: null argument");
  return guarded([&] {
    check_model_config(*model, config->value);
    return LD_OK;
  });
}

ld_status ld_model_has_adapters(const ld_model* model, int* out) {
  LD_REQUIRE(model && out, "ld_model_has_adapters: null argument");
  *out = model->model->has_adapters() ? 1 : 0;
  return LD_OK;
}

ld_status ld_model_guidance(const ld_model* model, double* out) {
  LD_REQUIRE(model && out, "ld_model_guidance: null argument");
  LD_REQUIRE(model->guidance, "ld_model_guidance: model carries no adapters");
  *out = *model->guidance;
  return LD_OK;
}

ld_status ld_model_base_hash(const ld_model* model, char** out) {
  LD_REQUIRE(model && out, "ld_model_base_hash: null argument");
  return guarded([&] {
    *out = dup_string(ldistill::content_hash(model->model->base_parameters()));
    return LD_OK;
  });
}

ld_status ld_distill(ld_model* model, const ld_config* config, const char* log_csv_path,
                     ld_distill_summary* summary) {
  LD_REQUIRE(model && config, "ld_distill: null argument");
  return guarded([&] {
    const auto& cfg = validated(*config);
    check_model_config(*model, cfg);
    const auto result = ldistill::run_distillation(*model->model, cfg.data, model->schedule, cfg.distill);
    model->guidance = cfg.distill.guidance;
    if (log_csv_path) {
      std::ostringstream csv;
      result.log.write_csv(csv);
      write_text_file(log_csv_path, csv.str());
    }
    if (summary) {
      summary->steps = result.losses.size();
      summary->adapted_layers = result.adapted_layers;
      summary->trainable_params = result.trainable_params;
      summary->expected_adapter_params = ldistill::count_adapter_params(
          cfg.net, cfg.distill.rank, ldistill::admissible_layers(cfg.net, cfg.distill.rank));
      summary->guidance = cfg.distill.guidance;
      summary->initial_agreement_mse = result.initial_agreement;
      summary->final_agreement_mse = result.final_agreement;
    }
    return LD_OK;
  });
}

ld_status ld_sample(const ld_model* model, const ld_sample_options* options, const char* out_path,
                    ld_sample_summary* summary) {
  LD_REQUIRE(model && options, "ld_sample: null argument");
  LD_REQUIRE(options->n > 0, "ld_sample: n must be positive");
  LD_REQUIRE(options->mode == LD_SAMPLER_ANCESTRAL || options->mode == LD_SAMPLER_DETERMINISTIC,
             "ld_sample: unknown sampler mode");
  if (options->use_adapters && !model->model->has_adapters()) {
    return set_error(LD_ERR_INVALID_ARGUMENT, "ld_sample: student sampling requires adapters");
  }
  return guarded([&] {
    const auto& m = *model->model;
    const auto predictor = options->use_adapters ? ldistill::student_predictor(m)
                                                 : ldistill::teacher_predictor(m, {options->guidance});
    const ldistill::Label label = options->label == 0 ? ldistill::Label{} : ldistill::Label{options->label};
    if (label && (*label < 1 || static_cast<std::size_t>(*label) > m.config().num_classes)) {
      ldistill::fail(ldistill::ErrorKind::InvalidArgument,
                     "ld_sample: class " + std::to_string(*label) + " outside [1, " +
                         std::to_string(m.config().num_classes) + "]");
    }
    const auto mode = options->mode == LD_SAMPLER_ANCESTRAL ? ldistill::SamplerMode::Ancestral
                                                            : ldistill::SamplerMode::Deterministic;
    const auto run = ldistill::sample(predictor, model->schedule, options->n, m.config().data_dim, label,
                                      options->seed, mode, options->steps);
    if (out_path) {
      std::ostringstream text;
      ldistill::write_samples(text, run.samples, label);
      write_text_file(out_path, text.str());
    }
    if (summary) {
      summary->nfe = run.nfe;
      summary->wall_clock_s = run.wall_clock_s;
    }
    return LD_OK;
  });
}

ld_status ld_report_memory(const ld_config* config, const ld_model* live, char** text_out, char** csv_out) {
  LD_REQUIRE(config, "ld_report_memory: null config");
  return guarded([&] {
    const auto& cfg = validated(*config);
    const auto rows = ldistill::table_one(cfg.net, cfg.distill.rank, cfg.memory);
    std::string text = ldistill::format_memory_table(rows);
    std::ostringstream csv;
    ldistill::write_memory_csv(csv, rows);
    ld_status status = LD_OK;
    if (live) {
      check_model_config(*live, cfg);
      const auto census = ldistill::live_param_census(*live->model);
      const auto problems = ldistill::census_mismatches(census, rows.back(), live->model->has_adapters());
      std::ostringstream extra;
      extra << "live census: base=" << census.base << " adapters=" << census.adapters << " frozen=" << census.frozen
            << " trainable=" << census.trainable << " base_allocations=" << census.base_storage_allocations << '\n';
      if (problems.empty()) {
        extra << "analytic == actual\n";
      } else {
        for (const auto& p : problems) extra << "MISMATCH " << p << '\n';
        status = set_error(LD_ERR_MISMATCH, "live census disagrees with analytic counts");
      }
      text += extra.str();
    }
    if (text_out) *text_out = dup_string(text);
    if (csv_out) *csv_out = dup_string(csv.str());
    return status;
  });
}

ld_status ld_eval(const ld_model* model, const ld_config* config, double guidance, const char* out_csv,
                  ld_eval_summary* summary, char** text_out) {
  LD_REQUIRE(model && config, "ld_eval: null argument");
  if (!model->model->has_adapters()) return set_error(LD_ERR_INVALID_ARGUMENT, "ld_eval: model carries no adapters");
  return guarded([&] {
    // Only the data and eval.* settings apply; the network comes from the model.
    const auto& cfg = validated(*config);
    const auto report = ldistill::evaluate(*model->model, cfg.data, model->schedule, {guidance}, cfg.eval);
    if (out_csv) {
      std::ostringstream csv;
      report.write_csv(csv);
      write_text_file(out_csv, csv.str());
    }
    if (summary) {
      summary->agreement_mse = report.agreement_mse;
      summary->quality_preserved = report.quality_preserved() ? 1 : 0;
      summary->all_finite = report.all_finite() ? 1 : 0;
    }
    if (text_out) *text_out = dup_string(report.summary());
    if (!report.all_finite()) return set_error(LD_ERR_NUMERIC, "ld_eval: non-finite metric");
    if (!report.quality_preserved()) return set_error(LD_ERR_CRITERION, "ld_eval: quality-preservation criterion failed");
    return LD_OK;
  });
}

}  // extern "C"
