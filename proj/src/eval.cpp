#include "ldistill/eval.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "ldistill/distill.hpp"
#include "ldistill/error.hpp"

namespace ldistill {

namespace {

double mean_pair_distance(const Tensor& a, const Tensor& b) {
  const auto av = a.values();
  const auto bv = b.values();
  const std::size_t d = a.cols();
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = av[i * d + k] - bv[j * d + k];
        sq += diff * diff;
      }
      row += std::sqrt(sq);
    }
    total += row;
  }
  return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

double mean_log_density(const Tensor& samples, int label, const GmmSpec& spec) {
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    acc += true_log_density(spec, {samples.at(i, 0), samples.at(i, 1)}, label);
  }
  return acc / static_cast<double>(samples.rows());
}

}  // namespace

double agreement_mse(const Denoiser& model, const NoisedBatch& probe, GuidanceSpec guidance) {
  NoGradGuard no_grad;
  NfeCounter nfe;
  const Tensor teacher = teacher_predict(model, probe.x_t, probe.t, probe.y, guidance, nfe);
  const Tensor student = student_predict(model, probe.x_t, probe.t, probe.y, nfe);
  return mse(student, teacher, Reduction::MeanRows).item();
}

double energy_distance(const Tensor& samples_a, const Tensor& samples_b) {
  if (samples_a.cols() != samples_b.cols()) {
    fail(ErrorKind::Shape, "energy_distance: dimension mismatch " + shape_string(samples_a.shape()) + " vs " +
                               shape_string(samples_b.shape()));
  }
  const double ab = mean_pair_distance(samples_a, samples_b);
  const double aa = mean_pair_distance(samples_a, samples_a);
  const double bb = mean_pair_distance(samples_b, samples_b);
  return 2.0 * ab - aa - bb;
}

ClassAlignment condition_alignment(const Tensor& samples, int label, const GmmSpec& spec) {
  if (label < 1 || static_cast<std::size_t>(label) > spec.classes()) {
    fail(ErrorKind::InvalidArgument, "condition_alignment: label " + std::to_string(label) + " out of range");
  }
  if (samples.cols() != 2) fail(ErrorKind::Shape, "condition_alignment: samples must be 2-D");
  const auto& mu = spec.means[static_cast<std::size_t>(label - 1)];
  double mx = 0.0, my = 0.0;
  std::size_t nearest = 0;
  for (std::size_t i = 0; i < samples.rows(); ++i) {
    const double x = samples.at(i, 0);
    const double y = samples.at(i, 1);
    mx += x;
    my += y;
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < spec.classes(); ++k) {
      const double d = std::hypot(x - spec.means[k][0], y - spec.means[k][1]);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    if (best + 1 == static_cast<std::size_t>(label)) ++nearest;
  }
  const double n = static_cast<double>(samples.rows());
  return {label, std::hypot(mx / n - mu[0], my / n - mu[1]), static_cast<double>(nearest) / n};
}

bool EvalReport::quality_preserved() const {
  if (classes.empty()) return false;
  for (const auto& c : classes) {
    if (!c.quality_preserved) return false;
  }
  return true;
}

bool EvalReport::all_finite() const {
  if (!std::isfinite(agreement_mse)) return false;
  for (const auto& c : classes) {
    for (double v : {c.energy_student_vs_teacher, c.energy_teacher_vs_teacher, c.student_alignment.mean_error,
                     c.teacher_alignment.mean_error, c.student_mean_log_density, c.teacher_mean_log_density}) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

void EvalReport::write_csv(std::ostream& out) const {
  out << "class,guidance,agreement_mse,energy_student_teacher,energy_teacher_teacher,student_mean_error,"
         "teacher_mean_error,student_nearest_fraction,teacher_nearest_fraction,student_mean_log_density,"
         "teacher_mean_log_density,quality_preserved\n";
  out << std::setprecision(12);
  for (const auto& c : classes) {
    out << c.label << ',' << guidance << ',' << agreement_mse << ',' << c.energy_student_vs_teacher << ','
        << c.energy_teacher_vs_teacher << ',' << c.student_alignment.mean_error << ','
        << c.teacher_alignment.mean_error << ',' << c.student_alignment.nearest_fraction << ','
        << c.teacher_alignment.nearest_fraction << ',' << c.student_mean_log_density << ','
        << c.teacher_mean_log_density << ',' << (c.quality_preserved ? 1 : 0) << '\n';
  }
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  os << std::setprecision(6);
  os << "guidance s            : " << guidance << '\n';
  os << "agreement MSE         : " << agreement_mse << '\n';
  for (const auto& c : classes) {
    os << "class " << c.label << ": energy(student,teacher) = " << c.energy_student_vs_teacher
       << ", energy(teacher,teacher) = " << c.energy_teacher_vs_teacher
       << ", nearest-mean student/teacher = " << c.student_alignment.nearest_fraction << '/'
       << c.teacher_alignment.nearest_fraction << ", mean log p student/teacher = " << c.student_mean_log_density
       << '/' << c.teacher_mean_log_density << (c.quality_preserved ? "  [ok]" : "  [DEGRADED]") << '\n';
  }
  os << "quality preserved     : " << (quality_preserved() ? "yes" : "no") << '\n';
  return os.str();
}

EvalReport evaluate(const Denoiser& model, const GmmSpec& spec, const NoiseSchedule& sched, GuidanceSpec guidance,
                    const EvalOptions& options) {
  EvalReport report;
  report.guidance = guidance.s;
  report.agreement_mse =
      agreement_mse(model, make_probe_set(spec, sched, options.probe_size, options.probe_seed), guidance);
  const auto teacher = teacher_predictor(model, guidance);
  const auto student = student_predictor(model);
  const std::size_t dim = model.config().data_dim;
  for (std::size_t k = 1; k <= spec.classes(); ++k) {
    const int label = static_cast<int>(k);
    const std::uint64_t offset = k * 7919;
    const auto reference = sample(teacher, sched, options.samples_per_class, dim, label, options.seed + offset,
                                  options.mode, options.steps);
    const auto calibration = sample(teacher, sched, options.samples_per_class, dim, label,
                                    options.calibration_seed + offset, options.mode, options.steps);
    const auto distilled = sample(student, sched, options.samples_per_class, dim, label, options.seed + offset,
                                  options.mode, options.steps);
    ClassEval c;
    c.label = label;
    c.energy_student_vs_teacher = energy_distance(distilled.samples, reference.samples);
    c.energy_teacher_vs_teacher = energy_distance(calibration.samples, reference.samples);
    c.student_alignment = condition_alignment(distilled.samples, label, spec);
    c.teacher_alignment = condition_alignment(reference.samples, label, spec);
    c.student_mean_log_density = mean_log_density(distilled.samples, label, spec);
    c.teacher_mean_log_density = mean_log_density(reference.samples, label, spec);
    c.quality_preserved = c.energy_student_vs_teacher <= options.quality_factor * c.energy_teacher_vs_teacher;
    report.classes.push_back(c);
  }
  return report;
}

}  // namespace ldistill
