#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ldistill/checkpoint.hpp"
#include "ldistill/config.hpp"
#include "ldistill/error.hpp"
#include "ldistill/lora.hpp"

using namespace ldistill;
namespace fs = std::filesystem;

namespace {

DenoiserConfig small_config() {
  DenoiserConfig c;
  c.hidden_width = 16;
  c.num_blocks = 1;
  c.time_embed_dim = 8;
  c.cond_embed_dim = 4;
  c.timesteps = 20;
  return c;
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("ldistill_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::InvalidArgument;
}

}  // namespace

using Checkpoints = TempDir;

TEST_F(Checkpoints, TeacherRoundTripIsExact) {
  const Denoiser model(small_config(), 4);
  const auto sched = make_schedule(20, 1e-4, 0.05);
  save_teacher(model, sched, dir_ / "teacher.manifest");
  EXPECT_TRUE(fs::exists(dir_ / "teacher.bin"));
  const auto loaded = load_teacher(dir_ / "teacher.manifest");
  EXPECT_EQ(loaded.model.config(), model.config());
  EXPECT_EQ(loaded.schedule.alpha_bar, sched.alpha_bar);
  EXPECT_EQ(loaded.base_hash, content_hash(model.base_parameters()));
  const auto a = model.base_parameters(), b = loaded.model.base_parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].name(), b[i].name());
    const auto va = a[i].tensor().values(), vb = b[i].tensor().values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin()));
  }
}

TEST_F(Checkpoints, ManifestListsEachParameterOnce) {
  const Denoiser model(small_config(), 4);
  save_teacher(model, make_schedule(20, 1e-4, 0.05), dir_ / "teacher.manifest");
  const auto c = read_checkpoint(dir_ / "teacher.manifest");
  std::set<std::string> names;
  for (const auto& t : c.tensors) EXPECT_TRUE(names.insert(t.name).second) << t.name;
  EXPECT_EQ(names.size(), model.base_parameters().size());
}

TEST_F(Checkpoints, SameModelSameBlob) {
  const auto sched = make_schedule(20, 1e-4, 0.05);
  save_teacher(Denoiser(small_config(), 4), sched, dir_ / "a.manifest");
  save_teacher(Denoiser(small_config(), 4), sched, dir_ / "b.manifest");
  EXPECT_EQ(slurp(dir_ / "a.bin"), slurp(dir_ / "b.bin"));
}

TEST_F(Checkpoints, CorruptBlobIsDetected) {
  save_teacher(Denoiser(small_config(), 4), make_schedule(20, 1e-4, 0.05), dir_ / "teacher.manifest");
  {
    std::fstream f(dir_ / "teacher.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put('\x7f');
  }
  EXPECT_EQ(kind_of([&] { load_teacher(dir_ / "teacher.manifest"); }), ErrorKind::Mismatch);
}

TEST_F(Checkpoints, AdaptersRoundTripAndHashCheck) {
  Denoiser model(small_config(), 4);
  attach_adapters(model, 2, 3.0, admissible_layers(model.config(), 2), 5);
  for (auto& p : model.adapter_parameters()) {
    for (auto& v : p.tensor().mutable_values()) v += 0.125;
  }
  save_adapters(model, 2.5, dir_ / "adapters.manifest");

  const auto c = read_checkpoint(dir_ / "adapters.manifest");
  for (const auto& t : c.tensors) {
    const bool is_factor = t.name.ends_with(".lora.A") || t.name.ends_with(".lora.B");
    EXPECT_TRUE(is_factor) << t.name;
  }
  EXPECT_EQ(c.require_meta("guidance_s"), "2.5");

  Denoiser fresh(small_config(), 4);
  const auto info = load_adapters(fresh, dir_ / "adapters.manifest");
  EXPECT_EQ(info.guidance_s, 2.5);
  EXPECT_EQ(info.rank, 2u);
  EXPECT_EQ(info.alpha, 3.0);
  const auto a = model.adapter_parameters(), b = fresh.adapter_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto va = a[i].tensor().values(), vb = b[i].tensor().values();
    EXPECT_TRUE(std::equal(va.begin(), va.end(), vb.begin())) << a[i].name();
  }
  for (const auto& p : fresh.base_parameters()) EXPECT_TRUE(p.frozen()) << p.name();

  Denoiser other(small_config(), 99);
  EXPECT_EQ(kind_of([&] { load_adapters(other, dir_ / "adapters.manifest"); }), ErrorKind::Mismatch);
  EXPECT_FALSE(other.has_adapters());
}

TEST_F(Checkpoints, MissingManifestIsIoError) {
  EXPECT_EQ(kind_of([&] { load_teacher(dir_ / "nope.manifest"); }), ErrorKind::Io);
}

TEST(Config, DefaultsMatchLibraryDefaults) {
  const auto c = parse_run_config("");
  EXPECT_EQ(c.net, DenoiserConfig{});
  EXPECT_EQ(c.distill.rank, 8u);
  EXPECT_EQ(c.distill.guidance, 3.0);
  EXPECT_EQ(c.schedule.steps, 200u);
  EXPECT_EQ(c.eval.steps, 50u);
}

TEST(Config, ParsesAssignmentsAndComments) {
  const auto c = parse_run_config(
      "# comment\n"
      "distill.rank = 4   # trailing\n"
      "\n"
      "distill.guidance=2.5\n"
      "net.hidden_width = 64\n"
      "schedule.steps = 100\n"
      "teacher.lr = 3e-3\n");
  EXPECT_EQ(c.distill.rank, 4u);
  EXPECT_EQ(c.distill.guidance, 2.5);
  EXPECT_EQ(c.net.hidden_width, 64u);
  EXPECT_EQ(c.net.timesteps, 100u);
  EXPECT_EQ(c.teacher.adam.lr, 3e-3);
  EXPECT_EQ(c.make_noise_schedule().steps, 100u);
}

TEST(Config, UnknownKeyNamesKeyAndLine) {
  try {
    parse_run_config("distill.rank = 4\ndistill.rnak = 8\n", "run.cfg");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    const std::string what = e.what();
    EXPECT_NE(what.find("distill.rnak"), std::string::npos) << what;
    EXPECT_NE(what.find("run.cfg:2"), std::string::npos) << what;
  }
}

TEST(Config, RejectsBadValues) {
  EXPECT_EQ(kind_of([] { parse_run_config("distill.rank = eight\n"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { parse_run_config("distill.rank = -1\n"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { parse_run_config("distill.rank\n"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { parse_run_config("net.time_embed_dim = 7\n"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { parse_run_config("data.gmm = spiral\n"); }), ErrorKind::Config);
  EXPECT_EQ(kind_of([] { parse_run_config("distill.lr_schedule = step\n"); }), ErrorKind::Config);
}

TEST(Config, LrSchedule) {
  EXPECT_EQ(parse_run_config("").distill.lr_schedule, LrSchedule::Cosine);
  EXPECT_EQ(parse_run_config("distill.lr_schedule = constant\n").distill.lr_schedule, LrSchedule::Constant);
}

TEST(Config, MissingFileNamesPath) {
  try {
    load_run_config("/nonexistent/dir/run.cfg");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/run.cfg"), std::string::npos);
  }
}

TEST(Config, EveryKeyIsSettable) {
  RunConfig c;
  for (const auto& key : RunConfig::keys()) {
    EXPECT_NE(key.find('.'), std::string::npos) << key;
  }
  EXPECT_GE(RunConfig::keys().size(), 30u);
  EXPECT_EQ(kind_of([&] { c.set("nope.key", "1"); }), ErrorKind::Config);
}
