#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qnn/checkpoint.hpp"
#include "qnn/config.hpp"
#include "qnn/errors.hpp"
#include "qnn/model.hpp"

using namespace qnn;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("qnn_test_ckpt_" + name); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& bytes) { std::ofstream(p, std::ios::binary) << bytes; }

ModelConfig small() {
  ModelConfig cfg;
  cfg.r2h_size = 16;
  cfg.hidden = 8;
  cfg.depth = 2;
  cfg.input_dim = 12;
  return cfg;
}

}  // namespace

TEST_CASE("config serialization and digest") {
  ModelConfig a;
  ModelConfig b;
  b.apply(a.serialize());
  CHECK(b.serialize() == a.serialize());
  CHECK(a.digest().size() == 16);
  CHECK(a.digest() == b.digest());

  b.set("lr", "0.002");
  CHECK(b.digest() != a.digest());
  b.set("lr", "1e-3");
  CHECK(b.digest() == a.digest());

  // FNV-1a 64 reference vectors.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("config parsing") {
  ModelConfig cfg;
  const auto keys = cfg.apply("# experiment\nfront-end = naive-quat\n\n  depth=2  # trailing comment\nseed = 7\n");
  CHECK(keys == std::vector<std::string>{"front-end", "depth", "seed"});
  CHECK(cfg.front_end == FrontEnd::kNaiveQuat);
  CHECK(cfg.depth == 2);
  CHECK(cfg.seed == 7);

  CHECK_THROWS_AS(cfg.apply("depth\n"), ConfigError);
  CHECK_THROWS_AS(cfg.set("depth", "two"), ConfigError);
  CHECK_THROWS_AS(cfg.set("depth", "-1"), ConfigError);
  CHECK_THROWS_AS(cfg.set("front-end", "fft"), ConfigError);
  CHECK_THROWS_AS(cfg.set("r2h-activation", "sigmoid"), ConfigError);
  CHECK_THROWS_AS(cfg.set("colour", "blue"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_file(temp_file("missing.txt")), IoError);
}

TEST_CASE("config validation") {
  CHECK_NOTHROW(ModelConfig{}.validate());
  auto bad = [](auto mutate) {
    ModelConfig c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](auto& c) { c.r2h_size = 1022; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) { c.hidden = 1022; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) { c.dropout = 1.0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) { c.lr = 0; }).validate(), ConfigError);
  CHECK_THROWS_AS(bad([](auto& c) {
                    c.front_end = FrontEnd::kIdentity;
                    c.input_dim = 39;
                  }).validate(),
                  ConfigError);
  // A real stack does not care about multiples of 4.
  CHECK_NOTHROW(bad([](auto& c) {
                  c.front_end = FrontEnd::kIdentity;
                  c.stack = StackKind::kLSTM;
                  c.input_dim = 39;
                  c.hidden = 30;
                  c.dropout = 0;
                }).validate());
}

TEST_CASE("checkpoint round trip") {
  AcousticModel<float> model(small());
  const auto path = temp_file("rt.qnn");
  save_checkpoint(path, small(), model.parameters());
  CHECK(checkpoint_digest(path) == small().digest());

  auto other_cfg = small();
  other_cfg.seed = 99;  // different init, same shapes
  AcousticModel<float> other(other_cfg);
  auto params = other.parameters();
  CHECK_THROWS_AS(load_checkpoint(path, other_cfg, params), DigestMismatchError);
  load_checkpoint(path, small(), params);
  const auto orig = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    CHECK(params[i].name == orig[i].name);
    CHECK(std::memcmp(params[i].tensor.data().data(), orig[i].tensor.data().data(),
                      orig[i].tensor.size() * sizeof(float)) == 0);
  }

  // f64 models write dtype tag 1 and cannot be loaded into f32 parameters.
  auto cfg64 = small();
  cfg64.precision = Precision::kF64;
  AcousticModel<double> m64(cfg64);
  const auto path64 = temp_file("rt64.qnn");
  save_checkpoint(path64, cfg64, m64.parameters());
  auto p32 = AcousticModel<float>(cfg64).parameters();
  CHECK_THROWS_AS(load_checkpoint(path64, cfg64, p32), FormatError);
}

TEST_CASE("checkpoint byte layout") {
  auto cfg = small();
  Tensor<double> t({2}, {1.5, -2.0});
  const auto path = temp_file("layout.qnn");
  save_checkpoint<double>(path, cfg, {{"ab", t}});
  const std::string s = slurp(path);
  REQUIRE(s.size() == 4 + 8 + 4 + (4 + 2 + 1 + 4 + 4 + 16));
  CHECK(s.substr(0, 4) == "QNN1");
  std::uint64_t digest = 0;
  for (int i = 0; i < 8; ++i) digest |= std::uint64_t(static_cast<unsigned char>(s[4 + i])) << (8 * i);
  CHECK(digest == fnv1a64(cfg.serialize()));
  CHECK(s[12] == 1);                  // one record
  CHECK(s[16] == 2);                  // name length
  CHECK(s.substr(20, 2) == "ab");
  CHECK(s[22] == 1);                  // f64
  CHECK(s[23] == 1);                  // rank
  CHECK(s[27] == 2);                  // extent
  double first = 0;
  std::memcpy(&first, s.data() + 31, 8);
  CHECK(first == 1.5);
}

TEST_CASE("corrupted checkpoints") {
  AcousticModel<float> model(small());
  const auto path = temp_file("corrupt.qnn");
  save_checkpoint(path, small(), model.parameters());
  const std::string good = slurp(path);
  auto params = model.parameters();

  std::string bad = good;
  bad[0] = 'X';
  spit(path, bad);
  CHECK_THROWS_AS(load_checkpoint(path, small(), params), FormatError);
  CHECK_THROWS_AS(checkpoint_digest(path), FormatError);

  spit(path, good.substr(0, good.size() / 2));
  try {
    load_checkpoint(path, small(), params);
    FAIL("expected truncation error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }

  CHECK_THROWS_AS(load_checkpoint(temp_file("absent.qnn"), small(), params), IoError);
}
