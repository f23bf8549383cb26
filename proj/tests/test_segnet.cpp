#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "metatune/autodiff.hpp"
#include "metatune/metrics.hpp"
#include "metatune/param_file.hpp"
#include "metatune/segnet.hpp"
#include "metatune/synthdata.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace metatune;
using metatune::testing::random_labels;
using metatune::testing::random_tensor;

namespace fs = std::filesystem;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.base_width = 2;
  c.image_size = 16;
  return c;
}

Sample random_sample(Rng& rng, const NetworkConfig& c) {
  return {random_tensor(rng, {c.in_channels, c.image_size, c.image_size}, 0.0, 1.0),
          random_labels(rng, c.image_size, c.image_size, c.num_classes)};
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "metatune_test_segnet";
  fs::create_directories(dir);
  return dir / name;
}

double sgd_on(ParamVector& p, const Sample& s, double lr) {
  Tape tape;
  const auto vars = leaves(tape, p);
  const Var l = loss(p.config, vars, s);
  const auto g = tape.grad(l, vars, false);
  for (std::size_t k = 0; k < vars.size(); ++k) {
    for (std::size_t j = 0; j < p.tensors[k].size(); ++j) p.tensors[k][j] -= lr * g[k].value()[j];
  }
  return l.item();
}

}  // namespace

TEST(Segnet, ParamCountMatchesHandCount) {
  // enc1 8*4*9+8, enc2 16*8*9+16, bottleneck 32*16*9+32,
  // dec1 16*32*9+16, dec2 8*16*9+8, head 4*8+4.
  EXPECT_EQ(param_count(NetworkConfig{}), 296u + 1168u + 4640u + 4624u + 1160u + 36u);
  EXPECT_EQ(param_count(NetworkConfig{}), 11924u);
  EXPECT_EQ(init_params(NetworkConfig{}, 1).count(), 11924u);
}

TEST(Segnet, ParameterNamesFollowLayerOrder) {
  const ParamVector p = init_params(NetworkConfig{}, 1);
  ASSERT_EQ(p.names.size(), 12u);
  EXPECT_EQ(p.names.front(), "enc1.weight");
  EXPECT_EQ(p.names.back(), "head.bias");
}

TEST(Segnet, InitIsDeterministicPerSeed) {
  EXPECT_EQ(init_params(NetworkConfig{}, 42), init_params(NetworkConfig{}, 42));
  EXPECT_NE(init_params(NetworkConfig{}, 42), init_params(NetworkConfig{}, 43));
}

TEST(Segnet, InitBoundsFollowFanIn) {
  const ParamVector p = init_params(NetworkConfig{}, 3);
  const double bound = std::sqrt(1.0 / 36.0);
  for (double v : p.tensors[0].data()) EXPECT_LE(std::abs(v), bound);
  for (double v : p.tensors[1].data()) EXPECT_EQ(v, 0.0);
}

TEST(Segnet, ForwardShape) {
  Rng rng(1);
  const ParamVector p = init_params(NetworkConfig{}, 1);
  const Tensor logits = forward(p, random_tensor(rng, {4, 64, 64}, 0.0, 1.0));
  EXPECT_EQ(logits.shape(), (Shape{4, 64, 64}));
}

TEST(Segnet, RejectsWrongImageShape) {
  const ParamVector p = init_params(NetworkConfig{}, 1);
  EXPECT_THROW(forward(p, Tensor(Shape{3, 64, 64})), ShapeError);
  EXPECT_THROW(forward(p, Tensor(Shape{4, 32, 32})), ShapeError);
}

TEST(Segnet, ZeroParamsGiveZeroLogitsAndLogKLoss) {
  Rng rng(2);
  const ParamVector z = zeros_like(init_params(NetworkConfig{}, 1));
  const Sample s = random_sample(rng, NetworkConfig{});
  const Tensor logits = forward(z, s.image);
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(loss_value(z, s), std::log(4.0), 1e-12);
  const LabelMap pred = predict(z, s.image);
  for (auto v : pred.data) EXPECT_EQ(v, 0);
}

TEST(Segnet, ArgmaxBreaksTiesTowardLowestClass) {
  Tensor logits(Shape{3, 1, 2});
  logits[0] = 1.0;
  logits[2] = 1.0;  // class 1 ties class 0 at pixel 0
  logits[1] = 0.0;
  logits[5] = 2.0;  // class 2 wins pixel 1
  const LabelMap m = argmax_labels(logits);
  EXPECT_EQ(m.data[0], 0);
  EXPECT_EQ(m.data[1], 2);
}

TEST(Segnet, EveryParameterTensorAffectsTheLoss) {
  Rng rng(3);
  const NetworkConfig c = tiny_config();
  ParamVector p = init_params(c, 5);
  for (Tensor& t : p.tensors) {
    if (t.rank() == 1) t = random_tensor(rng, t.shape(), -0.1, 0.1);
  }
  const Sample s = random_sample(rng, c);
  Tape tape;
  const auto vars = leaves(tape, p);
  const auto g = tape.grad(loss(c, vars, s), vars, false);
  for (std::size_t k = 0; k < g.size(); ++k) {
    double norm = 0.0;
    for (double v : g[k].value().data()) norm += v * v;
    EXPECT_GT(norm, 0.0) << p.names[k];
  }
}

TEST(Segnet, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    EXPECT_LT(metatune::testing::oracles::segnet_gradcheck_error(rng, trial), 1e-4) << "trial " << trial;
  }
}

TEST(Segnet, SgdReducesLossOnFixedSample) {
  Rng rng(6);
  const NetworkConfig c = tiny_config();
  ParamVector p = init_params(c, 7);
  const Sample s = random_sample(rng, c);
  const double before = loss_value(p, s);
  for (int i = 0; i < 20; ++i) sgd_on(p, s, 0.05);
  EXPECT_LT(loss_value(p, s), before);
}

TEST(Segnet, OverfitsSingleLesionSlice) {
  // With the U(-sqrt(1/fan_in), +) init, plain SGD at lr 0.05 sits on the
  // all-background plateau for several hundred steps before lesions appear.
  const PatientVolume vol = gen_patient(Domain::source, 11, GenConfig{});
  const Sample& s = vol.slices[vol.slices.size() / 2];
  ParamVector p = init_params(NetworkConfig{}, 1);
  double best = 0.0;
  for (int i = 1; i <= 4000 && best <= 0.9; ++i) {
    sgd_on(p, s, 0.05);
    if (i % 250 == 0) best = std::max(best, dice_report(predict(p, s.image), s.labels, 4).mean_foreground);
  }
  EXPECT_GT(best, 0.9);
}

TEST(ParamFile, RoundTripIsBitExact) {
  const ParamVector p = init_params(NetworkConfig{}, 9);
  const fs::path f = temp_file("roundtrip.mtp");
  write_params(p, f);
  EXPECT_EQ(read_params(f), p);
  EXPECT_EQ(fs::file_size(f), 4u + 4u + 20u + 8u * 11924u);
}

TEST(ParamFile, RoundTripKeepsNonDefaultConfig) {
  const ParamVector p = init_params(tiny_config(), 9);
  const fs::path f = temp_file("tiny.mtp");
  write_params(p, f);
  const ParamVector q = read_params(f);
  EXPECT_EQ(q.config, tiny_config());
  EXPECT_EQ(q, p);
}

TEST(ParamFile, RejectsBadMagic) {
  const fs::path f = temp_file("bad_magic.mtp");
  std::ofstream(f, std::ios::binary) << "NOPE0000";
  try {
    read_params(f);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_EQ(e.field_name, "magic");
  }
}

TEST(ParamFile, RejectsTruncatedData) {
  const fs::path f = temp_file("truncated.mtp");
  write_params(init_params(NetworkConfig{}, 9), f);
  fs::resize_file(f, fs::file_size(f) - 3);
  try {
    read_params(f);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_EQ(e.field_name, "head.bias");
  }
}

TEST(ParamFile, RejectsTrailingBytes) {
  const fs::path f = temp_file("trailing.mtp");
  write_params(init_params(NetworkConfig{}, 9), f);
  std::ofstream(f, std::ios::binary | std::ios::app) << 'x';
  EXPECT_THROW(read_params(f), IoError);
}

TEST(ParamFile, MissingFileNamesPath) {
  try {
    read_params("/nonexistent/params.mtp");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/params.mtp"), std::string::npos);
  }
}
