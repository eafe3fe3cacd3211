#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "tiny.hpp"
#include "w2p/config.hpp"
#include "w2p/errors.hpp"
#include "w2p/experiment.hpp"
#include "w2p/io.hpp"

using namespace w2p;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("w2p_io_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

io::Container sample() {
  io::Container c;
  c.kind = "checkpoint";
  c.header = R"({"a":1})";
  Matrix m(2, 3);
  m << 1.0, -2.5, 3e-300, 0.0, -0.0, 1e300;
  c.arrays.add("w", m, true);
  c.arrays.add("frozen", Matrix::Constant(1, 1, 7.0), false);
  return c;
}

void flip_byte(const fs::path& p, std::streamoff at) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(at);
  char b = 0;
  f.read(&b, 1);
  b = static_cast<char>(b ^ 0x20);
  f.seekp(at);
  f.write(&b, 1);
}

}  // namespace

TEST(Container, RoundTrip) {
  const auto d = scratch("roundtrip");
  const auto c = sample();
  io::write_container(d / "a.bin", c);
  const auto r = io::read_container(d / "a.bin", "checkpoint");
  EXPECT_EQ(r.header, c.header);
  EXPECT_TRUE(r.arrays == c.arrays);
  EXPECT_FALSE(r.arrays[r.arrays.id("frozen")].trainable());
  io::write_container(d / "b.bin", r);
  EXPECT_EQ(io::file_digest(d / "a.bin"), io::file_digest(d / "b.bin"));
  fs::remove_all(d);
}

TEST(Container, DetectsDamage) {
  const auto d = scratch("damage");
  io::write_container(d / "a.bin", sample());
  EXPECT_THROW(io::read_container(d / "a.bin", "lm-fixture"), IntegrityError);
  EXPECT_THROW(io::read_container(d / "missing.bin", "checkpoint"), IntegrityError);

  fs::copy_file(d / "a.bin", d / "flip.bin");
  flip_byte(d / "flip.bin", static_cast<std::streamoff>(fs::file_size(d / "flip.bin")) - 3);
  EXPECT_THROW(io::read_container(d / "flip.bin", "checkpoint"), IntegrityError);

  fs::copy_file(d / "a.bin", d / "magic.bin");
  flip_byte(d / "magic.bin", 0);
  EXPECT_THROW(io::read_container(d / "magic.bin", "checkpoint"), IntegrityError);

  fs::copy_file(d / "a.bin", d / "short.bin");
  fs::resize_file(d / "short.bin", fs::file_size(d / "a.bin") - 9);
  EXPECT_THROW(io::read_container(d / "short.bin", "checkpoint"), IntegrityError);
  fs::remove_all(d);
}

TEST(Checkpoint, RoundTripAndLmMismatch) {
  const auto d = scratch("ckpt");
  const auto lm = tiny::random_lm(1);
  exp::Checkpoint ck;
  ck.system = sys::System::EncoderLlm;
  ck.stage = "asr-train";
  ck.params = sys::make_params(ck.system, tiny::model(), lm.config(), 3);
  ck.optimizer.steps = 12;
  for (const auto& p : ck.params.params()) {
    ck.optimizer.first.push_back(Matrix::Constant(p.value().rows(), p.value().cols(), 0.5));
    ck.optimizer.second.push_back(Matrix::Constant(p.value().rows(), p.value().cols(), 0.25));
  }
  ck.lm_checksum = lm.checksum();
  ck.epoch = 4;
  ck.config = {{"seed", 3}};
  save_checkpoint(d / "m.ckpt", ck);

  const auto r = exp::load_checkpoint(d / "m.ckpt", lm);
  EXPECT_EQ(r.system, ck.system);
  EXPECT_EQ(r.stage, ck.stage);
  EXPECT_TRUE(r.params == ck.params);
  EXPECT_EQ(r.optimizer.steps, 12);
  ASSERT_EQ(r.optimizer.first.size(), ck.optimizer.first.size());
  EXPECT_EQ(r.optimizer.second.back(), ck.optimizer.second.back());
  EXPECT_EQ(r.epoch, 4);
  EXPECT_EQ(r.config, ck.config);

  EXPECT_THROW(exp::load_checkpoint(d / "m.ckpt", tiny::random_lm(2)), IntegrityError);
  fs::remove_all(d);
}

TEST(Config, RoundTripAndUnknownKeys) {
  auto c = cfg::default_config();
  c.seed = 42;
  c.fixture.data.splits.test = 17;
  c.asr.gamma = 3.5;
  c.finetune.epochs = 9;
  c.system = sys::System::Cascade;
  c.eval_tasks = {lm::Task::Cipher};
  const auto j = cfg::to_json(c);
  EXPECT_EQ(cfg::to_json(cfg::from_json(j)), j);

  EXPECT_EQ(cfg::to_json(cfg::from_json(nlohmann::json::object())), cfg::to_json(cfg::default_config()));
  EXPECT_THROW(cfg::from_json(nlohmann::json{{"sed", 1}}), UsageError);
  EXPECT_THROW(cfg::from_json(nlohmann::json{{"train", {{"asr", {{"gama", 1.0}}}}}}), UsageError);

  const auto d = scratch("config");
  cfg::save(d / "c.json", c);
  EXPECT_EQ(cfg::to_json(cfg::load(d / "c.json")), j);
  fs::remove_all(d);
}

TEST(Config, SubSeedsDiffer) {
  const auto c = cfg::default_config();
  EXPECT_NE(cfg::sub_seed(c, cfg::SeedStream::Init), cfg::sub_seed(c, cfg::SeedStream::Shuffle));
  auto c2 = c;
  c2.seed = 2;
  EXPECT_NE(cfg::sub_seed(c, cfg::SeedStream::Init), cfg::sub_seed(c2, cfg::SeedStream::Init));
}
