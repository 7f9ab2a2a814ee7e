#include <gtest/gtest.h>

#include "mocc/checkpoint.hpp"
#include "test_util.hpp"

using namespace mocc;

namespace {

std::vector<SamplePair> dataset(std::uint64_t seed) {
  SynthOptions o;
  o.n_per_class = 12;
  o.n_classes = 2;
  o.seed = seed;
  return synth_generate(o);
}

OccModel small_model(std::uint64_t seed) {
  const auto data = dataset(0);
  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 6;
  c.seed = seed;
  c.lr = 3e-3;
  c.lambda = 0.25;
  c.regularizer = Regularizer::logdet;
  TrainOptions o;
  o.arch.channels = {8, 8, 4};
  auto m = train(std::vector<SamplePair>(data.begin(), data.begin() + 12), c, o);
  m.positive_class = 0;
  return m;
}

} // namespace

TEST(Checkpoint, RoundTripPreservesEverything) {
  TempDir dir;
  const auto m = small_model(3);
  save_checkpoint(m, dir / "m.bin");
  const auto back = load_checkpoint(dir / "m.bin");
  EXPECT_TRUE(back == m);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.positive_class, 0);
  const auto probe = dataset(9);
  EXPECT_EQ(score_batch(back, probe), score_batch(m, probe));
}

TEST(Checkpoint, SameSeedByteIdentical) {
  TempDir dir;
  save_checkpoint(small_model(5), dir / "a.bin");
  save_checkpoint(small_model(5), dir / "b.bin");
  EXPECT_EQ(read_bytes(dir / "a.bin"), read_bytes(dir / "b.bin"));
  save_checkpoint(small_model(6), dir / "c.bin");
  EXPECT_NE(read_bytes(dir / "a.bin"), read_bytes(dir / "c.bin"));
}

TEST(Checkpoint, BadMagic) {
  TempDir dir;
  write_text(dir / "x.bin", "NOPE0000000000");
  EXPECT_THROW(load_checkpoint(dir / "x.bin"), FormatError);
  write_text(dir / "y.bin", "MO");
  EXPECT_THROW(load_checkpoint(dir / "y.bin"), FormatError);
}

TEST(Checkpoint, VersionMismatch) {
  TempDir dir;
  save_checkpoint(small_model(1), dir / "m.bin");
  auto bytes = read_bytes(dir / "m.bin");
  bytes[4] = 7;
  write_text(dir / "v.bin", bytes);
  EXPECT_THROW(load_checkpoint(dir / "v.bin"), VersionError);
}

TEST(Checkpoint, TruncationNamesTensor) {
  TempDir dir;
  save_checkpoint(small_model(1), dir / "m.bin");
  const auto bytes = read_bytes(dir / "m.bin");
  write_text(dir / "t.bin", bytes.substr(0, bytes.size() - 10));
  try {
    load_checkpoint(dir / "t.bin");
    FAIL();
  } catch (const CorruptionError &e) {
    EXPECT_NE(std::string(e.what()).find("tensor"), std::string::npos) << e.what();
  }
  for (std::size_t cut : std::vector<std::size_t>{7, 40, 120, bytes.size() / 2})
    EXPECT_THROW(
        {
          write_text(dir / "t.bin", bytes.substr(0, cut));
          load_checkpoint(dir / "t.bin");
        },
        CorruptionError)
        << cut;
}

TEST(Checkpoint, TrailingBytes) {
  TempDir dir;
  save_checkpoint(small_model(1), dir / "m.bin");
  write_text(dir / "t.bin", read_bytes(dir / "m.bin") + "x");
  EXPECT_THROW(load_checkpoint(dir / "t.bin"), CorruptionError);
}

TEST(Checkpoint, UnwritablePathIsIoError) {
  TempDir dir;
  EXPECT_THROW(save_checkpoint(small_model(1), dir / "no_such_dir" / "m.bin"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "absent.bin"), IoError);
}

TEST(Checkpoint, FailedSaveKeepsOldFile) {
  TempDir dir;
  const auto m = small_model(1);
  save_checkpoint(m, dir / "m.bin");
  const auto before = read_bytes(dir / "m.bin");
  // A directory squatting on the temporary name makes the write fail.
  std::filesystem::create_directory(dir / "m.bin.tmp");
  EXPECT_THROW(save_checkpoint(small_model(2), dir / "m.bin"), IoError);
  EXPECT_EQ(read_bytes(dir / "m.bin"), before);
}
