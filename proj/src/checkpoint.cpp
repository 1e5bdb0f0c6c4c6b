#include "ldistill/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "ldistill/error.hpp"

namespace ldistill {

namespace {

constexpr const char* kMagic = "ldistill-checkpoint 1";

void append_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffU));
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

std::string serialize(std::span<const NamedTensor> tensors) {
  std::string blob;
  for (const auto& t : tensors) {
    for (double v : t.tensor.values()) append_le(blob, v);
  }
  return blob;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::Io, "sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return os.str();
}

std::string shape_token(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out;
}

Shape parse_shape(const std::string& token, const std::string& where) {
  Shape shape;
  std::stringstream ss(token);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(part, &used);
      if (used != part.size() || v == 0) throw std::invalid_argument(part);
      shape.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorKind::Io, where + ": bad shape '" + token + "'");
    }
  }
  if (shape.empty()) fail(ErrorKind::Io, where + ": empty shape");
  return shape;
}

std::vector<NamedTensor> named(std::span<const Parameter> params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name(), p.tensor()});
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double meta_double(const Checkpoint& c, const std::string& key) {
  const auto& v = c.require_meta(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail(ErrorKind::Io, "checkpoint: meta '" + key + "' is not a number: '" + v + "'");
  }
}

std::size_t meta_size(const Checkpoint& c, const std::string& key) {
  const double d = meta_double(c, key);
  if (d < 0 || d != static_cast<double>(static_cast<std::size_t>(d))) {
    fail(ErrorKind::Io, "checkpoint: meta '" + key + "' is not a count");
  }
  return static_cast<std::size_t>(d);
}

}  // namespace

const std::string* Checkpoint::find_meta(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return &v;
  }
  return nullptr;
}

const std::string& Checkpoint::require_meta(const std::string& key) const {
  const auto* v = find_meta(key);
  if (!v) fail(ErrorKind::Io, "checkpoint: missing meta '" + key + "'");
  return *v;
}

void write_checkpoint(const std::filesystem::path& manifest, const Checkpoint& checkpoint) {
  auto blob_path = manifest;
  blob_path.replace_extension(".bin");
  std::ostringstream text;
  text << kMagic << '\n' << "blob = " << blob_path.filename().string() << '\n';
  for (const auto& [k, v] : checkpoint.meta) text << "meta " << k << " = " << v << '\n';
  std::size_t offset = 0;
  for (const auto& t : checkpoint.tensors) {
    text << "tensor name=" << t.name << " shape=" << shape_token(t.tensor.shape()) << " dtype=f64le offset=" << offset
         << '\n';
    offset += t.tensor.numel() * 8;
  }
  const std::string blob = serialize(checkpoint.tensors);

  if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());
  std::ofstream blob_out(blob_path, std::ios::binary | std::ios::trunc);
  blob_out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream manifest_out(manifest, std::ios::trunc);
  manifest_out << text.str();
  if (!blob_out || !manifest_out) fail(ErrorKind::Io, "cannot write checkpoint " + manifest.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) fail(ErrorKind::Io, "cannot open checkpoint manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    fail(ErrorKind::Io, manifest.string() + ": not a checkpoint manifest");
  }
  Checkpoint c;
  std::string blob_name;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = manifest.string() + ":" + std::to_string(line_no);
    if (line.empty()) continue;
    if (line.rfind("blob = ", 0) == 0) {
      blob_name = line.substr(7);
    } else if (line.rfind("meta ", 0) == 0) {
      const auto eq = line.find(" = ");
      if (eq == std::string::npos) fail(ErrorKind::Io, where + ": malformed meta line");
      c.meta.emplace_back(line.substr(5, eq - 5), line.substr(eq + 3));
    } else if (line.rfind("tensor ", 0) == 0) {
      std::map<std::string, std::string> fields;
      std::stringstream ss(line.substr(7));
      std::string tok;
      while (ss >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) fail(ErrorKind::Io, where + ": malformed field '" + tok + "'");
        fields[tok.substr(0, eq)] = tok.substr(eq + 1);
      }
      for (const char* key : {"name", "shape", "dtype", "offset"}) {
        if (!fields.count(key)) fail(ErrorKind::Io, where + ": tensor entry missing '" + key + "'");
      }
      if (fields["dtype"] != "f64le") fail(ErrorKind::Io, where + ": unsupported dtype " + fields["dtype"]);
      entries.push_back({fields["name"], parse_shape(fields["shape"], where), std::stoull(fields["offset"])});
    } else {
      fail(ErrorKind::Io, where + ": unrecognized line");
    }
  }
  if (blob_name.empty()) fail(ErrorKind::Io, manifest.string() + ": no blob entry");

  const auto blob_path = manifest.parent_path() / blob_name;
  std::ifstream blob_in(blob_path, std::ios::binary);
  if (!blob_in) fail(ErrorKind::Io, "cannot open checkpoint blob " + blob_path.string());
  const std::string blob((std::istreambuf_iterator<char>(blob_in)), std::istreambuf_iterator<char>());

  std::map<std::string, int> names;
  for (const auto& e : entries) {
    if (names[e.name]++) fail(ErrorKind::Io, manifest.string() + ": duplicate tensor '" + e.name + "'");
    const std::size_t n = shape_numel(e.shape);
    if (e.offset + n * 8 > blob.size()) {
      fail(ErrorKind::Io, manifest.string() + ": tensor '" + e.name + "' runs past the end of the blob");
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = read_le(blob.data() + e.offset + 8 * i);
    c.tensors.push_back({e.name, Tensor::from_values(e.shape, std::move(values))});
  }
  return c;
}

std::string content_hash(std::span<const Parameter> params) { return sha256_hex(serialize(named(params))); }

void save_teacher(const Denoiser& model, const NoiseSchedule& sched, const std::filesystem::path& manifest) {
  const auto& n = model.config();
  const auto base = model.base_parameters();
  Checkpoint c;
  c.meta = {
      {"kind", "teacher"},
      {"net.data_dim", std::to_string(n.data_dim)},
      {"net.hidden_width", std::to_string(n.hidden_width)},
      {"net.num_blocks", std::to_string(n.num_blocks)},
      {"net.time_embed_dim", std::to_string(n.time_embed_dim)},
      {"net.cond_embed_dim", std::to_string(n.cond_embed_dim)},
      {"net.num_classes", std::to_string(n.num_classes)},
      {"schedule.steps", std::to_string(sched.steps)},
      {"schedule.beta_min", format_double(sched.beta.front())},
      {"schedule.beta_max", format_double(sched.beta.back())},
      {"base_hash", content_hash(base)},
  };
  c.tensors = named(base);
  write_checkpoint(manifest, c);
}

LoadedTeacher load_teacher(const std::filesystem::path& manifest) {
  const Checkpoint c = read_checkpoint(manifest);
  if (c.require_meta("kind") != "teacher") fail(ErrorKind::Io, manifest.string() + ": not a teacher checkpoint");
  DenoiserConfig net;
  net.data_dim = meta_size(c, "net.data_dim");
  net.hidden_width = meta_size(c, "net.hidden_width");
  net.num_blocks = meta_size(c, "net.num_blocks");
  net.time_embed_dim = meta_size(c, "net.time_embed_dim");
  net.cond_embed_dim = meta_size(c, "net.cond_embed_dim");
  net.num_classes = meta_size(c, "net.num_classes");
  net.timesteps = meta_size(c, "schedule.steps");
  auto sched = make_schedule(net.timesteps, meta_double(c, "schedule.beta_min"), meta_double(c, "schedule.beta_max"));

  LoadedTeacher loaded{build_denoiser(net, 0), std::move(sched), c.require_meta("base_hash")};
  auto base = loaded.model.base_parameters();
  if (c.tensors.size() != base.size()) {
    fail(ErrorKind::Mismatch, manifest.string() + ": holds " + std::to_string(c.tensors.size()) +
                                  " tensors, network expects " + std::to_string(base.size()));
  }
  for (auto& p : base) {
    const NamedTensor* found = nullptr;
    for (const auto& t : c.tensors) {
      if (t.name == p.name()) found = &t;
    }
    if (!found) fail(ErrorKind::Mismatch, manifest.string() + ": missing tensor '" + p.name() + "'");
    if (found->tensor.shape() != p.tensor().shape()) {
      fail(ErrorKind::Mismatch, manifest.string() + ": tensor '" + p.name() + "' has shape " +
                                    shape_string(found->tensor.shape()) + ", expected " +
                                    shape_string(p.tensor().shape()));
    }
    const auto src = found->tensor.values();
    std::copy(src.begin(), src.end(), p.tensor().mutable_values().begin());
  }
  if (content_hash(base) != loaded.base_hash) {
    fail(ErrorKind::Mismatch, manifest.string() + ": blob does not match recorded base_hash");
  }
  return loaded;
}

void save_adapters(const Denoiser& model, double guidance_s, const std::filesystem::path& manifest) {
  const LoraAdapter* first = nullptr;
  for (const auto& l : model.layers()) {
    if (l.adapter()) {
      first = l.adapter();
      break;
    }
  }
  if (!first) fail(ErrorKind::InvalidArgument, "save_adapters: model carries no adapters");
  Checkpoint c;
  c.meta = {
      {"kind", "adapters"},
      {"guidance_s", format_double(guidance_s)},
      {"rank", std::to_string(first->rank)},
      {"alpha", format_double(first->alpha)},
      {"teacher_hash", content_hash(model.base_parameters())},
  };
  c.tensors = named(model.adapter_parameters());
  write_checkpoint(manifest, c);
}

AdapterInfo load_adapters(Denoiser& model, const std::filesystem::path& manifest) {
  const Checkpoint c = read_checkpoint(manifest);
  if (c.require_meta("kind") != "adapters") fail(ErrorKind::Io, manifest.string() + ": not an adapter checkpoint");
  AdapterInfo info{meta_double(c, "guidance_s"), meta_size(c, "rank"), meta_double(c, "alpha"),
                   c.require_meta("teacher_hash")};
  if (info.teacher_hash != content_hash(model.base_parameters())) {
    fail(ErrorKind::Mismatch, manifest.string() + ": adapters were trained against a different teacher (hash " +
                                  info.teacher_hash + ")");
  }
  if (model.has_adapters()) fail(ErrorKind::InvalidArgument, "load_adapters: model already carries adapters");
  if (c.tensors.size() % 2 != 0) fail(ErrorKind::Io, manifest.string() + ": unpaired adapter tensors");

  for (std::size_t i = 0; i < c.tensors.size(); i += 2) {
    const auto& a = c.tensors[i];
    const auto& b = c.tensors[i + 1];
    const auto suffix_a = std::string(".lora.A");
    if (a.name.size() <= suffix_a.size() || a.name.compare(a.name.size() - suffix_a.size(), suffix_a.size(), suffix_a)) {
      fail(ErrorKind::Io, manifest.string() + ": unexpected tensor '" + a.name + "'");
    }
    const std::string layer_name = a.name.substr(0, a.name.size() - suffix_a.size());
    if (b.name != layer_name + ".lora.B") fail(ErrorKind::Io, manifest.string() + ": unexpected tensor '" + b.name + "'");
    auto& layer = model.layer(layer_name);
    layer.set_adapter({Parameter(a.name, a.tensor.clone()), Parameter(b.name, b.tensor.clone()), info.rank,
                       info.alpha});
  }
  model.freeze_base();
  return info;
}

}  // namespace ldistill
