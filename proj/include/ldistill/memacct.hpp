#pragma once

// Parameter-driven memory model for the four training configurations:
// plain training, naive distillation (separate student copy), LoRA
// fine-tuning, and LoRA distillation over a shared base.

#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ldistill/denoiser.hpp"

namespace ldistill {

struct FootprintModel {
  double bytes_per_param = 4.0;
  double optimizer_state_multiplier = 2.0;
  double gradient_multiplier = 1.0;
  // Reserved: activations and runtime overhead are not modeled.
  bool include_inference_only = false;

  void validate() const;
};

struct ParamCounts {
  std::size_t base = 0;
  std::size_t adapters = 0;
  std::size_t duplicated = 0;
  std::size_t trainable = 0;
};

// bytes_per_param * (base + adapters + duplicated)
//   + trainable * bytes_per_param * (gradient_multiplier + optimizer_state_multiplier)
double footprint(const ParamCounts& counts, const FootprintModel& model);

// 100 * (baseline - config) / baseline.
double saving_ratio(double baseline_bytes, double config_bytes);

struct MemoryReport {
  std::string config;
  ParamCounts counts;
  double modeled_bytes = 0.0;
  double saving_pct = 0.0;
};

// Rows: baseline, naive-distill, lora, lora-distill. Adapters go on every
// layer admissible at `rank`, the same set a distillation run adapts.
std::vector<MemoryReport> table_one(const DenoiserConfig& net, std::size_t rank, const FootprintModel& model);

std::string format_memory_table(std::span<const MemoryReport> rows);
// "config,base,adapters,duplicated,trainable,bytes,saving_pct"
void write_memory_csv(std::ostream& out, std::span<const MemoryReport> rows);

struct ParamCensus {
  std::size_t base = 0;
  std::size_t adapters = 0;
  std::size_t frozen = 0;
  std::size_t trainable = 0;
  std::size_t base_tensors = 0;             // distinct base parameter names
  std::size_t base_storage_allocations = 0;  // distinct base storage buffers
};

// Walks the in-memory model, counting each distinct storage buffer once.
ParamCensus live_param_census(const Denoiser& model);

// Divergences between a live census and the analytic lora-distill row; empty
// when they agree.
std::vector<std::string> census_mismatches(const ParamCensus& census, const MemoryReport& lora_distill_row,
                                           bool adapters_attached);

}  // namespace ldistill
