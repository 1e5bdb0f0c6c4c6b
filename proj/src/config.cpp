#include "ldistill/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ldistill/error.hpp"

namespace ldistill {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::Config, "invalid number for '" + key + "': '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const auto n = std::stoull(v, &used);
      if (used == v.size()) return n;
    }
  } catch (const std::exception&) {
  }
  fail(ErrorKind::Config, "invalid non-negative integer for '" + key + "': '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

template <typename T>
Setter size_field(T RunConfig::*section, std::size_t T::*field) {
  return [=](RunConfig& c, const std::string& k, const std::string& v) {
    (c.*section).*field = static_cast<std::size_t>(to_u64(k, v));
  };
}
template <typename T>
Setter u64_field(T RunConfig::*section, std::uint64_t T::*field) {
  return [=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*field = to_u64(k, v); };
}
template <typename T>
Setter double_field(T RunConfig::*section, double T::*field) {
  return [=](RunConfig& c, const std::string& k, const std::string& v) { (c.*section).*field = to_double(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> m;
    m["data.gmm"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      if (v != "default") fail(ErrorKind::Config, "unsupported value for '" + k + "': '" + v + "' (only 'default')");
      c.data = default_gmm();
    };
    m["net.hidden_width"] = size_field(&RunConfig::net, &DenoiserConfig::hidden_width);
    m["net.num_blocks"] = size_field(&RunConfig::net, &DenoiserConfig::num_blocks);
    m["net.time_embed_dim"] = size_field(&RunConfig::net, &DenoiserConfig::time_embed_dim);
    m["net.cond_embed_dim"] = size_field(&RunConfig::net, &DenoiserConfig::cond_embed_dim);
    m["schedule.steps"] = size_field(&RunConfig::schedule, &ScheduleConfig::steps);
    m["schedule.beta_min"] = double_field(&RunConfig::schedule, &ScheduleConfig::beta_min);
    m["schedule.beta_max"] = double_field(&RunConfig::schedule, &ScheduleConfig::beta_max);
    m["teacher.steps"] = size_field(&RunConfig::teacher, &TeacherTrainConfig::steps);
    m["teacher.batch_size"] = size_field(&RunConfig::teacher, &TeacherTrainConfig::batch_size);
    m["teacher.p_uncond"] = double_field(&RunConfig::teacher, &TeacherTrainConfig::p_uncond);
    m["teacher.lr"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      c.teacher.adam.lr = to_double(k, v);
    };
    m["teacher.seed"] = u64_field(&RunConfig::teacher, &TeacherTrainConfig::seed);
    m["teacher.log_every"] = size_field(&RunConfig::teacher, &TeacherTrainConfig::log_every);
    m["distill.guidance"] = double_field(&RunConfig::distill, &DistillConfig::guidance);
    m["distill.rank"] = size_field(&RunConfig::distill, &DistillConfig::rank);
    m["distill.alpha"] = double_field(&RunConfig::distill, &DistillConfig::alpha);
    m["distill.steps"] = size_field(&RunConfig::distill, &DistillConfig::steps);
    m["distill.batch_size"] = size_field(&RunConfig::distill, &DistillConfig::batch_size);
    m["distill.lr"] = double_field(&RunConfig::distill, &DistillConfig::lr);
    m["distill.lr_schedule"] = [](RunConfig& c, const std::string& k, const std::string& v) {
      if (v == "cosine") {
        c.distill.lr_schedule = LrSchedule::Cosine;
      } else if (v == "constant") {
        c.distill.lr_schedule = LrSchedule::Constant;
      } else {
        fail(ErrorKind::Config, "invalid value for '" + k + "': '" + v + "' (cosine or constant)");
      }
    };
    m["distill.seed"] = u64_field(&RunConfig::distill, &DistillConfig::seed);
    m["distill.eval_every"] = size_field(&RunConfig::distill, &DistillConfig::eval_every);
    m["distill.probe_size"] = size_field(&RunConfig::distill, &DistillConfig::probe_size);
    m["memory.bytes_per_param"] = double_field(&RunConfig::memory, &FootprintModel::bytes_per_param);
    m["memory.optimizer_state_multiplier"] =
        double_field(&RunConfig::memory, &FootprintModel::optimizer_state_multiplier);
    m["memory.gradient_multiplier"] = double_field(&RunConfig::memory, &FootprintModel::gradient_multiplier);
    m["eval.samples_per_class"] = size_field(&RunConfig::eval, &EvalOptions::samples_per_class);
    m["eval.steps"] = size_field(&RunConfig::eval, &EvalOptions::steps);
    m["eval.seed"] = u64_field(&RunConfig::eval, &EvalOptions::seed);
    m["eval.calibration_seed"] = u64_field(&RunConfig::eval, &EvalOptions::calibration_seed);
    m["eval.probe_size"] = size_field(&RunConfig::eval, &EvalOptions::probe_size);
    m["eval.probe_seed"] = u64_field(&RunConfig::eval, &EvalOptions::probe_seed);
    return m;
  }();
  return table;
}

}  // namespace

NoiseSchedule RunConfig::make_noise_schedule() const {
  return make_schedule(schedule.steps, schedule.beta_min, schedule.beta_max);
}

void RunConfig::validate() const {
  try {
    data.validate();
    net.validate();
    make_noise_schedule();
    teacher.validate();
    distill.validate();
    memory.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, e.what());
  }
  if (net.num_classes != data.classes() || net.timesteps != schedule.steps) {
    fail(ErrorKind::Config, "net.num_classes/net.timesteps out of sync with data/schedule");
  }
  if (eval.steps < 1 || eval.steps > schedule.steps) {
    fail(ErrorKind::Config, "eval.steps must lie in [1, schedule.steps]");
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) fail(ErrorKind::Config, "unknown key '" + key + "'");
  it->second(*this, key, value);
  net.num_classes = data.classes();
  net.timesteps = schedule.steps;
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, v] : setters()) out.push_back(k);
  return out;
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::Config, where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      cfg.set(key, value);
    } catch (const Error& e) {
      fail(ErrorKind::Config, where + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Config, source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Config, "cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

}  // namespace ldistill
