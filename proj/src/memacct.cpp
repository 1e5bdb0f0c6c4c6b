#include "ldistill/memacct.hpp"

#include <iomanip>
#include <set>
#include <sstream>

#include "ldistill/error.hpp"
#include "ldistill/lora.hpp"

namespace ldistill {

void FootprintModel::validate() const {
  if (bytes_per_param < 0.0 || optimizer_state_multiplier < 0.0 || gradient_multiplier < 0.0) {
    fail(ErrorKind::InvalidArgument, "footprint model: multipliers must be non-negative");
  }
}

double footprint(const ParamCounts& c, const FootprintModel& m) {
  m.validate();
  const double stored = static_cast<double>(c.base + c.adapters + c.duplicated);
  return m.bytes_per_param * stored +
         static_cast<double>(c.trainable) * m.bytes_per_param * (m.gradient_multiplier + m.optimizer_state_multiplier);
}

double saving_ratio(double baseline_bytes, double config_bytes) {
  if (!(baseline_bytes > 0.0)) fail(ErrorKind::InvalidArgument, "saving_ratio: baseline must be positive");
  return 100.0 * (baseline_bytes - config_bytes) / baseline_bytes;
}

std::vector<MemoryReport> table_one(const DenoiserConfig& net, std::size_t rank, const FootprintModel& model) {
  const std::size_t base = count_base_params(net);
  const std::size_t adapters = count_adapter_params(net, rank, admissible_layers(net, rank));
  std::vector<MemoryReport> rows{
      {"baseline", {base, 0, 0, base}, 0.0, 0.0},
      {"naive-distill", {base, 0, base, base}, 0.0, 0.0},
      {"lora", {base, adapters, 0, adapters}, 0.0, 0.0},
      // Teacher and student share the one frozen base: no extra parameters.
      {"lora-distill", {base, adapters, 0, adapters}, 0.0, 0.0},
  };
  for (auto& r : rows) r.modeled_bytes = footprint(r.counts, model);
  for (auto& r : rows) r.saving_pct = saving_ratio(rows.front().modeled_bytes, r.modeled_bytes);
  return rows;
}

std::string format_memory_table(std::span<const MemoryReport> rows) {
  std::ostringstream os;
  os << std::left << std::setw(16) << "config" << std::right << std::setw(10) << "base" << std::setw(10)
     << "adapters" << std::setw(12) << "duplicated" << std::setw(11) << "trainable" << std::setw(12) << "bytes"
     << std::setw(12) << "saving_pct" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.config << std::right << std::setw(10) << r.counts.base << std::setw(10)
       << r.counts.adapters << std::setw(12) << r.counts.duplicated << std::setw(11) << r.counts.trainable
       << std::setw(12) << std::fixed << std::setprecision(0) << r.modeled_bytes << std::setw(12)
       << std::setprecision(2) << r.saving_pct << '\n';
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

void write_memory_csv(std::ostream& out, std::span<const MemoryReport> rows) {
  out << "config,base,adapters,duplicated,trainable,bytes,saving_pct\n";
  for (const auto& r : rows) {
    std::ostringstream line;
    line << r.config << ',' << r.counts.base << ',' << r.counts.adapters << ',' << r.counts.duplicated << ','
         << r.counts.trainable << ',' << std::fixed << std::setprecision(0) << r.modeled_bytes << ','
         << std::setprecision(2) << r.saving_pct << '\n';
    out << line.str();
  }
}

ParamCensus live_param_census(const Denoiser& model) {
  ParamCensus census;
  std::set<const void*> seen;
  std::set<std::string> base_names;
  std::set<const void*> base_storage;
  auto visit = [&](const Parameter& p, bool is_base) {
    if (is_base) {
      base_names.insert(p.name());
      base_storage.insert(p.tensor().storage_id());
    }
    if (!seen.insert(p.tensor().storage_id()).second) return;
    (is_base ? census.base : census.adapters) += p.numel();
    (p.frozen() ? census.frozen : census.trainable) += p.numel();
  };
  for (const auto& p : model.base_parameters()) visit(p, true);
  for (const auto& p : model.adapter_parameters()) visit(p, false);
  census.base_tensors = base_names.size();
  census.base_storage_allocations = base_storage.size();
  return census;
}

std::vector<std::string> census_mismatches(const ParamCensus& census, const MemoryReport& row,
                                           bool adapters_attached) {
  std::vector<std::string> out;
  auto check = [&](const char* what, std::size_t actual, std::size_t analytic) {
    if (actual != analytic) {
      out.push_back(std::string(what) + ": actual " + std::to_string(actual) + " vs analytic " +
                    std::to_string(analytic));
    }
  };
  check("base", census.base, row.counts.base);
  check("base storage allocations", census.base_storage_allocations, census.base_tensors);
  if (adapters_attached) {
    check("adapters", census.adapters, row.counts.adapters);
    check("trainable", census.trainable, row.counts.trainable);
    check("frozen", census.frozen, row.counts.base);
  }
  return out;
}

}  // namespace ldistill
