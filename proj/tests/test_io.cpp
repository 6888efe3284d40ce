#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "test_util.hpp"
#include "tzlab/config.hpp"
#include "tzlab/error.hpp"
#include "tzlab/io.hpp"
#include "tzlab/metrics.hpp"

using namespace tzlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tzlab_test_io_" + std::to_string(::getpid())) / name;
  fs::create_directories(p.parent_path());
  return p;
}

bool bit_identical(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// Minimal reader written against the P5 definition, independent of io.cpp.
std::vector<unsigned> read_pgm16(const fs::path& p, unsigned& w, unsigned& h) {
  std::ifstream in(p, std::ios::binary);
  std::string magic;
  unsigned maxval;
  in >> magic >> w >> h >> maxval;
  in.get();
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(maxval, 65535u);
  std::vector<unsigned> v(w * h);
  for (auto& x : v) {
    const int hi = in.get(), lo = in.get();
    x = static_cast<unsigned>(hi) << 8 | static_cast<unsigned>(lo);
  }
  return v;
}

}  // namespace

TEST(Tzt1, LayoutMatchesTheFormat) {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const auto bytes = io::encode_tzt1(t, {{"note", "x"}});
  ASSERT_GT(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TZT1");
  const std::uint32_t hlen = bytes[4] | bytes[5] << 8 | bytes[6] << 16 | static_cast<std::uint32_t>(bytes[7]) << 24;
  const auto header = io::Json::parse(bytes.begin() + 8, bytes.begin() + 8 + hlen);
  EXPECT_EQ(header["dtype"], "f64");
  EXPECT_EQ(header["shape"], io::Json::array({2, 3}));
  EXPECT_EQ(header["order"], "row-major");
  EXPECT_EQ(header["meta"]["note"], "x");
  EXPECT_EQ(bytes.size(), 8 + hlen + 6 * 8u);
  double third;
  std::memcpy(&third, bytes.data() + 8 + hlen + 16, 8);
  EXPECT_EQ(third, 3.0);
}

TEST(Tzt1, RoundTripBitExactF64AllShapes) {
  std::mt19937_64 rng(1);
  for (const Shape& s : {Shape{1}, Shape{7}, Shape{3, 4}, Shape{2, 3, 5}, Shape{2, 1, 4, 3}, Shape{0}}) {
    Tensor t = test::random_tensor(s, rng, -1e6, 1e6);
    if (t.size() > 0) t[0] = -0.0;
    const Tensor back = io::decode_tzt1(io::encode_tzt1(t)).tensor;
    EXPECT_TRUE(bit_identical(t, back)) << shape_to_string(s);
    EXPECT_EQ(back.dtype(), DType::f64);
  }
}

TEST(Tzt1, RoundTripBitExactF32) {
  std::mt19937_64 rng(2);
  Tensor t = test::random_tensor({4, 5, 6}, rng);
  for (double& v : t.values()) v = static_cast<float>(v);
  t.set_dtype(DType::f32);
  const auto bytes = io::encode_tzt1(t);
  const Tensor back = io::decode_tzt1(bytes).tensor;
  EXPECT_TRUE(bit_identical(t, back));
  EXPECT_EQ(back.dtype(), DType::f32);
  EXPECT_EQ(io::encode_tzt1(back), bytes);
}

TEST(Tzt1, FileRoundTripKeepsMeta) {
  const fs::path p = scratch("a/b/t.tzt1");
  Tensor t({2, 2}, std::vector<double>{0.1, 0.2, 0.3, 0.4});
  io::save_tzt1(p, t, {{"k", 5}});
  const auto doc = io::load_tzt1(p);
  EXPECT_TRUE(bit_identical(t, doc.tensor));
  EXPECT_EQ(doc.meta["k"], 5);
}

TEST(Tzt1, MalformedInputsAreIoErrors) {
  auto bytes = io::encode_tzt1(Tensor({3}, 1.0));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(io::decode_tzt1(bad_magic), IoError);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(io::decode_tzt1(truncated), IoError);
  EXPECT_THROW(io::decode_tzt1({'T', 'Z'}), IoError);
  EXPECT_THROW(io::load_tzt1(scratch("missing.tzt1")), IoError);
}

TEST(Bundle, NamedTensorsRoundTrip) {
  std::mt19937_64 rng(3);
  io::Bundle b;
  b.tensors = {{"a", test::random_tensor({2, 3}, rng)}, {"b", test::random_tensor({4}, rng)}};
  b.meta = {{"kind", "test"}};
  const fs::path p = scratch("bundle.tzt1");
  io::save_bundle(p, b);
  const io::Bundle back = io::load_bundle(p);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_TRUE(bit_identical(back.at("a"), b.tensors[0].value));
  EXPECT_TRUE(bit_identical(back.at("b"), b.tensors[1].value));
  EXPECT_EQ(back.meta["kind"], "test");
  EXPECT_FALSE(back.contains("c"));
}

TEST(Pgm, ZeroImageHasZeroPayload) {
  const fs::path p = scratch("zero.pgm");
  io::export_pgm(p, Tensor({1, 3, 4}, 0.0));
  unsigned w, h;
  for (unsigned v : read_pgm16(p, w, h)) EXPECT_EQ(v, 0u);
  EXPECT_EQ(w, 4u);
  EXPECT_EQ(h, 3u);
}

TEST(Pgm, OneMapsToFullScale) {
  const fs::path p = scratch("one.pgm");
  io::export_pgm(p, Tensor({1, 2, 2}, 1.0));
  unsigned w, h;
  for (unsigned v : read_pgm16(p, w, h)) EXPECT_EQ(v, 65535u);
}

TEST(Pgm, ReadBackEqualsQuantizedOriginal) {
  std::mt19937_64 rng(4);
  const Tensor x = test::random_tensor({1, 9, 7}, rng, 0.0, 1.0);
  const fs::path p = scratch("rand.pgm");
  io::export_pgm(p, x);
  unsigned w, h;
  const auto raw = read_pgm16(p, w, h);
  ASSERT_EQ(raw.size(), 63u);
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_EQ(raw[i], std::lround(x[i] * 65535.0));
  const Tensor back = io::import_pgm(p);
  EXPECT_EQ(back.shape(), (Shape{1, 9, 7}));
  for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_EQ(back[i], raw[i] / 65535.0);
  // Quantized images survive a second export unchanged.
  const fs::path q = scratch("rand2.pgm");
  io::export_pgm(q, back);
  EXPECT_EQ(io::read_file(p), io::read_file(q));
}

TEST(Pgm, OutOfRangeIsRejected) {
  EXPECT_THROW(io::export_pgm(scratch("bad.pgm"), Tensor({1, 2, 2}, 1.5)), NumericError);
  EXPECT_THROW(io::export_pgm(scratch("bad.pgm"), Tensor({1, 2, 2}, std::nan(""))), NumericError);
  EXPECT_THROW(io::export_pgm(scratch("bad.pgm"), Tensor({2, 2, 2}, 0.5)), ShapeError);
}

TEST(DomainFiles, ProjectionRoundTrip) {
  const fs::path phantom_path = scratch("ph.tzt1");
  sim::PhantomSpec ps;
  ps.size = 16;
  ps.depth = 16;
  ps.kind = sim::PhantomKind::Bars;
  ps.materials = {sim::hips(), sim::filled_resin()};
  ps.seed = 9;
  const sim::Phantom ph = sim::make_phantom(ps);
  io::save_phantom(phantom_path, ph);
  const sim::Phantom ph2 = io::load_phantom(phantom_path);
  EXPECT_EQ(ph2.labels, ph.labels);
  EXPECT_EQ(ph2.materials.size(), 2u);
  EXPECT_EQ(ph2.materials[1].n, ph.materials[1].n);

  const auto views = sim::simulate_views(ph, 1, 6.0, sim::BandTable::standard(), {}, 5);
  const fs::path p = scratch("view.tzt1");
  io::save_projection(p, views[1], {{"object", "bars-0"}});
  io::Json meta;
  const sim::SpectralProjection back = io::load_projection(p, &meta);
  EXPECT_EQ(meta["object"], "bars-0");
  EXPECT_EQ(back.view_angle, views[1].view_angle);
  EXPECT_EQ(back.bands, views[1].bands);
  // Stored as f32.
  for (std::size_t i = 0; i < back.amplitude.size(); ++i)
    EXPECT_EQ(back.amplitude[i], static_cast<double>(static_cast<float>(views[1].amplitude[i])));
  EXPECT_THROW(io::load_phantom(p), IoError);
}

TEST(DomainFiles, CheckpointRoundTrip) {
  const ModelConfig c = ModelConfig::toy(Arch::UNetMS);
  ParamStore params = init_model(c, 4);
  params.bn_state(params.bn_names()[0]).running_mean[0] = 0.25;
  OptimState st;
  st.step = 17;
  for (const auto& n : params.names()) {
    st.m[n] = Tensor(params.at(n).shape(), 0.5);
    st.v[n] = Tensor(params.at(n).shape(), 0.125);
  }
  const fs::path p = scratch("ck.tzt1");
  io::save_checkpoint(p, params, c, st);
  io::Checkpoint ck = io::load_checkpoint(p);
  EXPECT_EQ(ck.config.arch, Arch::UNetMS);
  EXPECT_EQ(ck.optim.step, 17u);
  for (const auto& n : params.names()) EXPECT_TRUE(bit_identical(ck.params.at(n), params.at(n))) << n;
  EXPECT_EQ(ck.params.bn_state(params.bn_names()[0]).running_mean[0], 0.25);
  EXPECT_EQ(ck.optim.m.at(params.names()[0])[0], 0.5);
}

TEST(RunConfigParse, EmptyDocumentGivesDefaults) {
  const RunConfig c = parse_run_config(io::Json::object());
  EXPECT_EQ(c.dataset.angles, 30u);
  EXPECT_EQ(c.dataset.step_deg, 6.0);
  EXPECT_EQ(c.dataset.bands.frequencies.size(), 12u);
  EXPECT_EQ(c.model.scales, 3u);
  EXPECT_EQ(c.train.options.adam.beta1, 0.9);
  EXPECT_EQ(c.train.options.adam.beta2, 0.999);
}

TEST(RunConfigParse, UnknownKeysAreRejectedAtEveryLevel) {
  for (const char* doc : {R"({"sede": 1})", R"({"phantom": {"sizes": 3}})", R"({"train": {"learning_rate": 1}})",
                          R"({"model": {"depth": 3}})", R"({"degrade": {"snr": 3}})", R"({"tomo": {"iters": 3}})",
                          R"({"train": {"augment": {"flip": true}}})"}) {
    EXPECT_THROW(parse_run_config(io::Json::parse(doc)), ConfigError) << doc;
  }
}

TEST(RunConfigParse, WrongTypesAndRangesAreRejected) {
  for (const char* doc :
       {R"({"seed": -1})", R"({"seed": "x"})", R"({"train": {"lr": "big"}})", R"({"train": {"batch_size": 0}})",
        R"({"acquisition": {"angles": 40, "step_deg": 6}})", R"({"bands": [0.5, 0.4]})", R"({"bands": []})",
        R"({"degrade": {"snr_db": "loud"}})", R"({"tomo": {"method": "art"}})", R"({"phantom": {"families": ["cube"]}})",
        R"({"train": {"beta1": 1.0}})", R"([1, 2])"}) {
    EXPECT_THROW(parse_run_config(io::Json::parse(doc)), ConfigError) << doc;
  }
}

TEST(RunConfigParse, BandCountMustMatchModel) {
  EXPECT_THROW(parse_run_config(io::Json::parse(R"({"bands": [0.4, 0.5, 0.6]})")), ConfigError);
  const RunConfig c =
      parse_run_config(io::Json::parse(R"({"bands": [0.4, 0.5, 0.6, 0.7], "model": {"band_count": 4}})"));
  EXPECT_EQ(c.model.band_count, 4u);
}

TEST(RunConfigParse, InfiniteSnrAndSeedPropagation) {
  const RunConfig c = parse_run_config(io::Json::parse(R"({"seed": 42, "degrade": {"snr_db": "inf"}})"));
  EXPECT_TRUE(std::isinf(c.dataset.degrade.snr_db));
  EXPECT_EQ(c.dataset.seed, 42u);
  EXPECT_EQ(c.train.options.seed, 42u);
}

TEST(RunConfigParse, NormalizedDocumentRoundTrips) {
  const RunConfig c = parse_run_config(io::Json::parse(
      R"({"seed": 5, "train": {"steps": 7, "augment": {"crop": 16}}, "tomo": {"method": "sart", "window": "hann"},
          "degrade": {"snr_db": null, "water_lines": [[0.557, 0.5]]}})"));
  const io::Json j = to_json(c);
  EXPECT_EQ(to_json(parse_run_config(j)), j);
  EXPECT_EQ(j["train"]["augment"]["crop"], 16);
  EXPECT_EQ(j["tomo"]["method"], "sart");
}

TEST(RunConfigOverride, DottedAssignments) {
  io::Json doc = io::Json::parse(R"({"train": {"lr": 0.1}})");
  apply_override(doc, "train.lr=0.001");
  apply_override(doc, "phantom.families=[\"disk\"]");
  apply_override(doc, "train.test_family=disk");
  EXPECT_EQ(doc["train"]["lr"], 0.001);
  EXPECT_EQ(doc["phantom"]["families"], io::Json::array({"disk"}));
  EXPECT_EQ(doc["train"]["test_family"], "disk");
  EXPECT_THROW(apply_override(doc, "novalue"), ConfigError);
  EXPECT_THROW(apply_override(doc, "train.lr.x=1"), ConfigError);
  EXPECT_THROW(apply_override(doc, "a..b=1"), ConfigError);
}

TEST(RunConfigLoad, FileWithOverrides) {
  const fs::path p = scratch("cfg.json");
  io::write_text(p, R"({"seed": 3, "train": {"steps": 5}})");
  const RunConfig c = load_run_config(p, {"train.steps=9", "seed=4"});
  EXPECT_EQ(c.train.options.steps, 9u);
  EXPECT_EQ(c.seed, 4u);
  io::write_text(p, "{not json");
  EXPECT_THROW(load_run_config(p), ConfigError);
  EXPECT_THROW(load_run_config(scratch("nope.json")), IoError);
}

TEST(Metrics, InfiniteFormatsAsString) { EXPECT_EQ(format_metric(psnr(Tensor({4}, 0.5), Tensor({4}, 0.5))), "inf"); }
