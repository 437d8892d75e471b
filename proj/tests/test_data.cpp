#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "qnn/data.hpp"
#include "qnn/errors.hpp"
#include "qnn/layers.hpp"
#include "qnn/training.hpp"

using namespace qnn;
namespace fs = std::filesystem;

namespace {

Utterance make_utt(const std::string& id, std::size_t frames, std::size_t dim, std::mt19937_64& rng) {
  Utterance u{id, frames, dim, {}, {}};
  std::normal_distribution<float> g;
  for (std::size_t i = 0; i < frames * dim; ++i) u.features.push_back(g(rng));
  for (std::size_t t = 0; t < frames; ++t) u.labels.push_back(static_cast<std::int32_t>(rng() % 5));
  return u;
}

bool same_bits(const std::vector<Utterance>& a, const std::vector<Utterance>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].id != b[i].id || a[i].frames != b[i].frames || a[i].dim != b[i].dim || a[i].labels != b[i].labels)
      return false;
    if (std::memcmp(a[i].features.data(), b[i].features.data(), a[i].features.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("qnn_test_data_" + name); }

}  // namespace

TEST_CASE("utterance validation") {
  Utterance u{"x", 2, 2, {1, 2, 3, 4}, {0, 1}};
  CHECK_NOTHROW(u.validate());
  u.features[3] = NAN;
  CHECK_THROWS_AS(u.validate(), DataError);
  CHECK_THROWS_AS((Utterance{"y", 0, 2, {}, {}}.validate()), DataError);
  CHECK_THROWS_AS((Utterance{"z", 2, 2, {1, 2, 3, 4}, {0}}.validate()), DataError);
}

TEST_CASE("QFEA round trip") {
  std::mt19937_64 rng(1);
  std::vector<Utterance> utts{make_utt("one", 3, 5, rng), make_utt("zwei-ü", 7, 5, rng), make_utt("", 1, 5, rng)};
  utts[0].features[0] = std::numeric_limits<float>::denorm_min();
  utts[0].features[1] = -0.0f;
  std::stringstream buf;
  write_qfea(buf, utts);
  CHECK(same_bits(read_qfea(buf), utts));

  const auto path = temp_file("rt.qfea");
  write_features(path, utts);
  CHECK(same_bits(read_features(path), utts));

  std::stringstream empty;
  write_qfea(empty, {});
  const std::string bytes = empty.str();
  CHECK(bytes.size() == 12);
  CHECK(bytes.substr(0, 4) == "QFEA");
  CHECK(read_qfea(empty).empty());
}

TEST_CASE("QFEA byte layout") {
  Utterance u{"ab", 1, 2, {1.0f, -2.0f}, {3}};
  std::stringstream buf;
  write_qfea(buf, {u});
  const std::string s = buf.str();
  const unsigned char expected[] = {'Q', 'F', 'E', 'A', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 'a', 'b', 1, 0, 0, 0, 2, 0,
                                    0, 0, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0, 3, 0, 0, 0};
  REQUIRE(s.size() == sizeof expected);
  CHECK(std::memcmp(s.data(), expected, sizeof expected) == 0);
}

TEST_CASE("QFEA errors carry offsets") {
  std::mt19937_64 rng(2);
  std::stringstream buf;
  write_qfea(buf, {make_utt("a", 4, 3, rng)});
  std::string bytes = buf.str();

  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream bad_magic(bad);
  try {
    read_qfea(bad_magic);
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
  }

  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_qfea(truncated), FormatError);

  std::string nan_bytes = bytes;
  const float nan = NAN;
  std::memcpy(nan_bytes.data() + 4 + 4 + 4 + 4 + 1 + 4 + 4, &nan, 4);
  std::istringstream with_nan(nan_bytes);
  CHECK_THROWS_AS(read_qfea(with_nan), DataError);

  CHECK_THROWS_AS(read_features(temp_file("does-not-exist.qfea")), IoError);
}

TEST_CASE("CSV") {
  std::istringstream in("id,frame,label,f0,f1,f2\nu1,0,2,0.5,-1,3.25\nu1,1,0,1e-3,2,-0\n");
  const auto utts = read_csv(in);
  REQUIRE(utts.size() == 1);
  CHECK(utts[0].frames == 2);
  CHECK(utts[0].dim == 3);
  CHECK(utts[0].features == std::vector<float>{0.5f, -1.0f, 3.25f, 1e-3f, 2.0f, -0.0f});
  CHECK(utts[0].labels == std::vector<std::int32_t>{2, 0});

  std::mt19937_64 rng(3);
  std::vector<Utterance> many{make_utt("a", 3, 4, rng), make_utt("b", 2, 4, rng)};
  std::stringstream buf;
  write_csv(buf, many);
  CHECK(same_bits(read_csv(buf), many));

  const auto path = temp_file("rt.csv");
  write_features(path, many);
  CHECK(same_bits(read_features(path), many));

  std::istringstream bad_header("id,frame,label,g0\nu,0,0,1\n");
  CHECK_THROWS_AS(read_csv(bad_header), DataError);
  std::istringstream bad_value("id,frame,label,f0\nu,0,0,abc\n");
  CHECK_THROWS_AS(read_csv(bad_value), DataError);
  std::istringstream inf_value("id,frame,label,f0\nu,0,0,inf\n");
  CHECK_THROWS_AS(read_csv(inf_value), DataError);
}

TEST_CASE("naive quaternion composition") {
  CHECK(naive_quat_width(40) == 40);
  CHECK(naive_quat_width(41) == 44);

  const auto single = naive_quat_compose({1, 2, 3, 4}, 1, 4);
  CHECK(single.features == std::vector<float>{1, 2, 3, 4});

  // Frame of 10 values → 3 quaternions, last padded with two zeros.
  std::vector<float> frame(10);
  std::iota(frame.begin(), frame.end(), 1.0f);
  const auto c = naive_quat_compose(frame, 1, 10);
  CHECK(c.dim == 12);
  CHECK(c.padded == 2);
  const QuatLayout layout{3};
  const auto qs = layout.unpack<float>(c.features);
  CHECK(qs[0] == Quaternion<float>{1, 2, 3, 4});
  CHECK(qs[1] == Quaternion<float>{5, 6, 7, 8});
  CHECK(qs[2] == Quaternion<float>{9, 10, 0, 0});

  // unpack ∘ compose recovers the frame order for D = 40.
  std::mt19937_64 rng(4);
  const auto u = make_utt("x", 6, 40, rng);
  const auto composed = naive_quat_compose(u.features, 6, 40);
  CHECK(composed.dim == 40);
  const QuatLayout ten{10};
  for (std::size_t t = 0; t < 6; ++t) {
    const auto q = ten.unpack<float>(std::span<const float>(composed.features).subspan(t * 40, 40));
    for (std::size_t k = 0; k < 10; ++k)
      for (int c2 = 0; c2 < 4; ++c2) CHECK(q[k][c2] == u.at(t, 4 * k + static_cast<std::size_t>(c2)));
  }
}

TEST_CASE("batching") {
  std::mt19937_64 rng(5);
  std::vector<Utterance> utts;
  std::size_t total = 0;
  for (int i = 0; i < 37; ++i) {
    utts.push_back(make_utt("u" + std::to_string(i), 3 + rng() % 40, 6, rng));
    total += utts.back().frames;
  }

  for (const auto& b : make_batches(utts, 1, nullptr, false)) {
    CHECK(b.max_frames == b.lengths[0]);
    CHECK(std::all_of(b.mask.begin(), b.mask.end(), [](auto m) { return m == 1; }));
  }

  auto padded_frames = [](const std::vector<UtteranceBatch>& bs) {
    std::size_t n = 0;
    for (const auto& b : bs) n += b.max_frames * b.batch - b.valid_frames();
    return n;
  };
  std::mt19937_64 shuffle_a(9), shuffle_b(9);
  const auto plain = make_batches(utts, 8, &shuffle_a, false);
  const auto bucketed = make_batches(utts, 8, &shuffle_b, true);
  CHECK(padded_frames(bucketed) <= padded_frames(plain));

  for (const auto* batches : {&plain, &bucketed}) {
    std::map<std::string, std::size_t> seen;
    std::size_t valid = 0;
    for (const auto& b : *batches) {
      valid += b.valid_frames();
      for (std::size_t col = 0; col < b.batch; ++col) {
        seen[b.ids[col]] += b.lengths[col];
        for (std::size_t t = 0; t < b.max_frames; ++t) {
          const bool m = b.mask[t * b.batch + col] != 0;
          CHECK(m == (t < b.lengths[col]));
          if (!m)
            for (std::size_t d = 0; d < b.dim; ++d) CHECK(b.features[(t * b.batch + col) * b.dim + d] == 0.0f);
        }
      }
    }
    CHECK(valid == total);
    REQUIRE(seen.size() == utts.size());
    for (const auto& u : utts) CHECK(seen[u.id] == u.frames);
  }

  // Frames land where they should.
  const auto b = make_batch({&utts[0], &utts[1]});
  for (std::size_t t = 0; t < utts[1].frames; ++t) {
    CHECK(b.labels[t * 2 + 1] == utts[1].labels[t]);
    CHECK(b.features[(t * 2 + 1) * 6 + 5] == utts[1].at(t, 5));
  }
  CHECK_THROWS_AS(make_batches(utts, 0, nullptr, false), DataError);
}

TEST_CASE("synthetic generator") {
  SynthSpec spec;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(same_bits(a.train, b.train));
  CHECK(same_bits(a.test, b.test));
  CHECK(a.train.size() == 200);
  CHECK(a.valid.size() == 50);
  CHECK(a.train[0].id != a.valid[0].id);

  SynthSpec other = spec;
  other.seed = 99;
  CHECK_FALSE(same_bits(generate_synthetic(other).train, a.train));

  // Delta-coded classes share their mean template.
  const auto& tpl = a.templates;
  REQUIRE(tpl.delta_coded.size() == 4);
  CHECK(tpl.delta_coded[2]);
  CHECK(tpl.delta_coded[3]);
  CHECK(tpl.means[2] == tpl.means[3]);
  for (std::size_t d = 0; d < spec.dim; ++d) CHECK(tpl.slopes[2][d] == -tpl.slopes[3][d]);

  SynthSpec bad = spec;
  bad.classes = 1;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
  bad = spec;
  bad.dim = 3;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
}

TEST_CASE("synthetic label priors") {
  SynthSpec spec;
  spec.priors = {0.4, 0.3, 0.2, 0.1};
  spec.train_utterances = 400;
  const auto ds = generate_synthetic(spec);
  std::vector<double> counts(4, 0);
  double frames = 0;
  for (const auto& u : ds.train)
    for (auto l : u.labels) {
      counts[static_cast<std::size_t>(l)] += 1;
      frames += 1;
    }
  REQUIRE(frames >= 1e4);
  for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(counts[c] / frames - spec.priors[c]) < 0.02);
}

TEST_CASE("noise-free static classes are separable by nearest template") {
  SynthSpec spec;
  spec.noise = 0;
  spec.delta_pairs = 0;
  const auto ds = generate_synthetic(spec);
  std::size_t errors = 0, frames = 0;
  for (const auto& u : ds.test)
    for (std::size_t t = 0; t < u.frames; ++t) {
      double best = INFINITY;
      std::int32_t arg = -1;
      for (std::size_t c = 0; c < spec.classes; ++c) {
        double d2 = 0;
        for (std::size_t d = 0; d < spec.dim; ++d) d2 += std::pow(u.at(t, d) - ds.templates.means[c][d], 2);
        if (d2 < best) {
          best = d2;
          arg = static_cast<std::int32_t>(c);
        }
      }
      errors += arg != u.labels[t];
      ++frames;
    }
  CHECK(errors == 0);
  CHECK(frames > 0);
}
