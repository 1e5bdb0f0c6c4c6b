#pragma once

// Run configuration: a flat key/value text file, one "section.key = value"
// per line, '#' starts a comment. Unknown keys are errors.
//
//   data.gmm                 default            (only the canonical 4-class mixture)
//   net.hidden_width         128
//   net.num_blocks           3
//   net.time_embed_dim       32
//   net.cond_embed_dim       16
//   schedule.steps           200
//   schedule.beta_min        1e-4
//   schedule.beta_max        0.02
//   teacher.steps            6000
//   teacher.batch_size       256
//   teacher.p_uncond         0.1
//   teacher.lr               1e-3
//   teacher.seed             1
//   teacher.log_every        100
//   distill.guidance         3.0
//   distill.rank             8
//   distill.alpha            8.0
//   distill.steps            20000
//   distill.batch_size       128
//   distill.lr               1e-3
//   distill.lr_schedule      cosine    (or constant)
//   distill.seed             2
//   distill.eval_every       1000
//   distill.probe_size       1024
//   memory.bytes_per_param   4
//   memory.optimizer_state_multiplier 2
//   memory.gradient_multiplier 1
//   eval.samples_per_class   2000
//   eval.steps               50
//   eval.seed                1001
//   eval.calibration_seed    2002
//   eval.probe_size          1024
//   eval.probe_seed          3003

#include <filesystem>
#include <string>
#include <vector>

#include "ldistill/datagen.hpp"
#include "ldistill/denoiser.hpp"
#include "ldistill/distill.hpp"
#include "ldistill/eval.hpp"
#include "ldistill/memacct.hpp"

namespace ldistill {

struct ScheduleConfig {
  std::size_t steps = 200;
  double beta_min = 1e-4;
  double beta_max = 0.02;
};

struct RunConfig {
  GmmSpec data = default_gmm();
  DenoiserConfig net{};
  ScheduleConfig schedule{};
  TeacherTrainConfig teacher{};
  DistillConfig distill{};
  FootprintModel memory{};
  EvalOptions eval{};

  NoiseSchedule make_noise_schedule() const;
  // Cross-field checks; net.num_classes and net.timesteps follow data/schedule.
  void validate() const;

  // Applies one assignment. Throws a Config error naming the key.
  void set(const std::string& key, const std::string& value);
  static std::vector<std::string> keys();
};

RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace ldistill
