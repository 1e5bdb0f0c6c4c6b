#pragma once

// Checkpoints are a text manifest plus one binary blob of little-endian
// float64 values, concatenated in manifest order.
//
//   ldistill-checkpoint 1
//   blob = teacher.bin
//   meta <key> = <value>
//   tensor name=<name> shape=<d0>x<d1> dtype=f64le offset=<byte offset>
//
// The blob path is relative to the manifest's directory.

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ldistill/denoiser.hpp"
#include "ldistill/diffusion.hpp"
#include "ldistill/numerics.hpp"

namespace ldistill {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<NamedTensor> tensors;

  const std::string* find_meta(const std::string& key) const;
  const std::string& require_meta(const std::string& key) const;
};

// Writes <manifest> and a sibling blob with the manifest's stem and ".bin".
void write_checkpoint(const std::filesystem::path& manifest, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& manifest);

// SHA-256 (hex) of the parameters serialized exactly as the blob stores them.
std::string content_hash(std::span<const Parameter> params);

struct LoadedTeacher {
  Denoiser model;
  NoiseSchedule schedule;
  std::string base_hash;
};

// Base weights only, with the network and schedule settings as metadata.
void save_teacher(const Denoiser& model, const NoiseSchedule& sched, const std::filesystem::path& manifest);
LoadedTeacher load_teacher(const std::filesystem::path& manifest);

struct AdapterInfo {
  double guidance_s = 0.0;
  std::size_t rank = 0;
  double alpha = 0.0;
  std::string teacher_hash;
};

// Adapter factors only ("<layer>.lora.A", "<layer>.lora.B") plus guidance_s,
// rank, alpha and the hash of the base they were trained against.
void save_adapters(const Denoiser& model, double guidance_s, const std::filesystem::path& manifest);
// Verifies the teacher hash, then attaches the stored adapters and freezes the base.
AdapterInfo load_adapters(Denoiser& model, const std::filesystem::path& manifest);

}  // namespace ldistill
