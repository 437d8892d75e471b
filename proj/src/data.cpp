#include "qnn/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "qnn/errors.hpp"

namespace qnn {

void Utterance::validate() const {
  if (frames == 0) throw DataError("utterance '" + id + "': no frames");
  if (dim == 0) throw DataError("utterance '" + id + "': zero feature dimension");
  if (features.size() != frames * dim) {
    throw DataError("utterance '" + id + "': " + std::to_string(features.size()) + " feature values for " +
                    std::to_string(frames) + "x" + std::to_string(dim));
  }
  if (labels.size() != frames) {
    throw DataError("utterance '" + id + "': " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(frames) + " frames");
  }
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t d = 0; d < dim; ++d)
      if (!std::isfinite(at(t, d))) {
        throw DataError("utterance '" + id + "': non-finite feature at frame " + std::to_string(t) +
                        ", dim " + std::to_string(d));
      }
}

std::size_t UtteranceBatch::valid_frames() const {
  return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
}

UtteranceBatch make_batch(const std::vector<const Utterance*>& utts) {
  if (utts.empty()) throw DataError("make_batch: no utterances");
  UtteranceBatch batch;
  batch.batch = utts.size();
  batch.dim = utts.front()->dim;
  for (const auto* u : utts) {
    if (u->dim != batch.dim) {
      throw DataError("make_batch: utterance '" + u->id + "' has dim " + std::to_string(u->dim) +
                      ", expected " + std::to_string(batch.dim));
    }
    batch.max_frames = std::max(batch.max_frames, u->frames);
  }
  const std::size_t B = batch.batch, D = batch.dim;
  batch.features.assign(batch.max_frames * B * D, 0.0f);
  batch.labels.assign(batch.max_frames * B, 0);
  batch.mask.assign(batch.max_frames * B, 0);
  for (std::size_t b = 0; b < B; ++b) {
    const Utterance& u = *utts[b];
    batch.lengths.push_back(u.frames);
    batch.ids.push_back(u.id);
    for (std::size_t t = 0; t < u.frames; ++t) {
      std::copy_n(u.features.begin() + t * D, D, batch.features.begin() + (t * B + b) * D);
      batch.labels[t * B + b] = u.labels[t];
      batch.mask[t * B + b] = 1;
    }
  }
  return batch;
}

std::vector<UtteranceBatch> make_batches(const std::vector<Utterance>& utts, std::size_t batch_size,
                                         std::mt19937_64* rng, bool sort_by_length) {
  if (batch_size == 0) throw DataError("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(utts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::vector<std::size_t>> groups;
  if (sort_by_length) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return utts[a].frames < utts[b].frames; });
  } else if (rng) {
    std::shuffle(order.begin(), order.end(), *rng);
  }
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    groups.emplace_back(order.begin() + i, order.begin() + std::min(order.size(), i + batch_size));
  }
  if (sort_by_length && rng) std::shuffle(groups.begin(), groups.end(), *rng);
  std::vector<UtteranceBatch> batches;
  batches.reserve(groups.size());
  for (const auto& g : groups) {
    std::vector<const Utterance*> members;
    for (std::size_t i : g) members.push_back(&utts[i]);
    batches.push_back(make_batch(members));
  }
  return batches;
}

// ---- QFEA --------------------------------------------------------------------

namespace {

constexpr char kQfeaMagic[4] = {'Q', 'F', 'E', 'A'};
constexpr std::uint32_t kQfeaVersion = 1;

class LeReader {
 public:
  explicit LeReader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(std::string("QFEA: truncated while reading ") + what, offset_ + in_.gcount());
    }
    offset_ += n;
  }

  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(reinterpret_cast<char*>(b), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw DataError(std::string("QFEA: ") + what + " exceeds 32 bits");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

void write_qfea(std::ostream& out, const std::vector<Utterance>& utts) {
  out.write(kQfeaMagic, 4);
  put_u32(out, kQfeaVersion);
  put_u32(out, checked_u32(utts.size(), "utterance count"));
  for (const auto& u : utts) {
    u.validate();
    put_u32(out, checked_u32(u.id.size(), "id length"));
    out.write(u.id.data(), static_cast<std::streamsize>(u.id.size()));
    put_u32(out, checked_u32(u.frames, "frame count"));
    put_u32(out, checked_u32(u.dim, "dimension"));
    for (float f : u.features) put_u32(out, std::bit_cast<std::uint32_t>(f));
    for (std::int32_t l : u.labels) put_u32(out, static_cast<std::uint32_t>(l));
  }
}

std::vector<Utterance> read_qfea(std::istream& in) {
  LeReader r(in);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kQfeaMagic, 4) != 0) throw FormatError("QFEA: bad magic", 0);
  const std::uint64_t version_offset = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kQfeaVersion) {
    throw FormatError("QFEA: unsupported version " + std::to_string(version), version_offset);
  }
  const std::uint32_t count = r.u32("utterance count");
  std::vector<Utterance> utts;
  for (std::uint32_t n = 0; n < count; ++n) {
    Utterance u;
    const std::uint32_t id_len = r.u32("id length");
    u.id.resize(id_len);
    if (id_len) r.bytes(u.id.data(), id_len, "id");
    const std::uint64_t shape_offset = r.offset();
    u.frames = r.u32("frame count");
    u.dim = r.u32("dimension");
    if (u.frames == 0 || u.dim == 0) {
      throw FormatError("QFEA: utterance '" + u.id + "' has empty shape", shape_offset);
    }
    u.features.resize(u.frames * u.dim);
    for (auto& f : u.features) f = std::bit_cast<float>(r.u32("features"));
    u.labels.resize(u.frames);
    for (auto& l : u.labels) l = static_cast<std::int32_t>(r.u32("labels"));
    u.validate();
    utts.push_back(std::move(u));
  }
  return utts;
}

// ---- CSV ---------------------------------------------------------------------

void write_csv(std::ostream& out, const std::vector<Utterance>& utts) {
  const std::size_t dim = utts.empty() ? 0 : utts.front().dim;
  out << "id,frame,label";
  for (std::size_t d = 0; d < dim; ++d) out << ",f" << d;
  out << "\n";
  char buf[32];
  for (const auto& u : utts) {
    u.validate();
    if (u.dim != dim) throw DataError("CSV: utterances must share one dimension");
    for (std::size_t t = 0; t < u.frames; ++t) {
      out << u.id << "," << t << "," << u.labels[t];
      for (std::size_t d = 0; d < dim; ++d) {
        auto res = std::to_chars(buf, buf + sizeof buf, u.at(t, d));
        out << "," << std::string_view(buf, res.ptr - buf);
      }
      out << "\n";
    }
  }
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename V>
V parse_number(std::string_view field, std::size_t line_no, const char* what) {
  V value{};
  while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
  auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw DataError("CSV line " + std::to_string(line_no) + ": cannot parse " + what + " '" +
                    std::string(field) + "'");
  }
  return value;
}

}  // namespace

std::vector<Utterance> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);
  if (header.size() < 4 || header[0] != "id" || header[1] != "frame" || header[2] != "label") {
    throw DataError("CSV: header must be id,frame,label,f0..f{D-1}");
  }
  const std::size_t dim = header.size() - 3;
  for (std::size_t d = 0; d < dim; ++d) {
    if (header[3 + d] != "f" + std::to_string(d)) {
      throw DataError("CSV: header column " + std::to_string(3 + d) + " should be f" + std::to_string(d));
    }
  }
  std::vector<Utterance> utts;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (fields.size() != dim + 3) {
      throw DataError("CSV line " + std::to_string(line_no) + ": expected " + std::to_string(dim + 3) +
                      " fields, got " + std::to_string(fields.size()));
    }
    const std::string id(fields[0]);
    if (utts.empty() || utts.back().id != id) {
      Utterance u;
      u.id = id;
      u.dim = dim;
      utts.push_back(std::move(u));
    }
    Utterance& u = utts.back();
    const auto frame = parse_number<std::size_t>(fields[1], line_no, "frame");
    if (frame != u.frames) {
      throw DataError("CSV line " + std::to_string(line_no) + ": frame " + std::to_string(frame) +
                      " out of order for '" + id + "' (expected " + std::to_string(u.frames) + ")");
    }
    u.labels.push_back(parse_number<std::int32_t>(fields[2], line_no, "label"));
    for (std::size_t d = 0; d < dim; ++d) {
      const float v = parse_number<float>(fields[3 + d], line_no, "feature");
      if (!std::isfinite(v)) {
        throw DataError("CSV line " + std::to_string(line_no) + ": non-finite feature at utterance '" + id +
                        "', frame " + std::to_string(frame) + ", dim " + std::to_string(d));
      }
      u.features.push_back(v);
    }
    ++u.frames;
  }
  for (const auto& u : utts) u.validate();
  return utts;
}

void write_features(const std::filesystem::path& path, const std::vector<Utterance>& utts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  if (path.extension() == ".csv") {
    write_csv(out, utts);
  } else {
    write_qfea(out, utts);
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::vector<Utterance> read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[4] = {};
  in.read(magic, 4);
  const bool is_qfea = in.gcount() == 4 && std::memcmp(magic, kQfeaMagic, 4) == 0;
  in.clear();
  in.seekg(0);
  return is_qfea ? read_qfea(in) : read_csv(in);
}

// ---- naive quaternion composition -------------------------------------------

std::size_t naive_quat_width(std::size_t dim) { return (dim + 3) / 4 * 4; }

ComposedFeatures naive_quat_compose(const std::vector<float>& features, std::size_t frames, std::size_t dim) {
  if (features.size() != frames * dim) throw DataError("naive_quat_compose: feature size mismatch");
  ComposedFeatures out;
  out.frames = frames;
  out.dim = naive_quat_width(dim);
  out.padded = out.dim - dim;
  const std::size_t h = out.dim / 4;
  out.features.assign(frames * out.dim, 0.0f);
  for (std::size_t t = 0; t < frames; ++t) {
    const float* src = features.data() + t * dim;
    float* dst = out.features.data() + t * out.dim;
    for (std::size_t k = 0; k < h; ++k)
      for (std::size_t c = 0; c < 4; ++c) {
        const std::size_t i = 4 * k + c;
        dst[c * h + k] = i < dim ? src[i] : 0.0f;
      }
  }
  return out;
}

// ---- synthetic ----------------------------------------------------------------

void SynthSpec::validate() const {
  if (classes < 2) throw ConfigError("synth: need at least 2 classes, got " + std::to_string(classes));
  if (dim < 4) throw ConfigError("synth: need dim >= 4, got " + std::to_string(dim));
  if (2 * delta_pairs > classes) throw ConfigError("synth: more delta-coded classes than classes");
  if (min_segment == 0 || max_segment < min_segment) throw ConfigError("synth: bad segment length range");
  if (min_frames == 0 || max_frames < min_frames) throw ConfigError("synth: bad utterance length range");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("synth: noise must be finite and >= 0");
  if (!std::isfinite(slope)) throw ConfigError("synth: slope must be finite");
  if (!priors.empty()) {
    if (priors.size() != classes) throw ConfigError("synth: priors size differs from classes");
    double total = 0;
    for (double p : priors) {
      if (!(p >= 0.0)) throw ConfigError("synth: priors must be non-negative");
      total += p;
    }
    if (!(total > 0.0)) throw ConfigError("synth: priors sum to zero");
  }
}

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5157u};
  return std::mt19937_64(seq);
}

SynthTemplates make_templates(const SynthSpec& spec) {
  auto rng = stream(spec.seed, 0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  SynthTemplates t;
  const std::size_t first_delta = spec.classes - 2 * spec.delta_pairs;
  t.means.resize(spec.classes);
  t.slopes.assign(spec.classes, std::vector<double>(spec.dim, 0.0));
  t.delta_coded.assign(spec.classes, false);
  for (std::size_t c = 0; c < first_delta; ++c) {
    t.means[c].resize(spec.dim);
    for (auto& v : t.means[c]) v = gauss(rng);
  }
  for (std::size_t p = 0; p < spec.delta_pairs; ++p) {
    const std::size_t a = first_delta + 2 * p, b = a + 1;
    std::vector<double> mean(spec.dim), pattern(spec.dim);
    for (auto& v : mean) v = gauss(rng);
    for (auto& v : pattern) v = coin(rng) ? spec.slope : -spec.slope;
    t.means[a] = mean;
    t.means[b] = mean;
    t.slopes[a] = pattern;
    for (std::size_t d = 0; d < spec.dim; ++d) t.slopes[b][d] = -pattern[d];
    t.delta_coded[a] = t.delta_coded[b] = true;
  }
  return t;
}

std::vector<Utterance> make_split(const SynthSpec& spec, const SynthTemplates& tpl, std::size_t count,
                                  std::uint64_t split_index, const std::string& prefix) {
  auto rng = stream(spec.seed, split_index);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> seg_len(spec.min_segment, spec.max_segment);
  std::uniform_int_distribution<std::size_t> utt_len(spec.min_frames, spec.max_frames);
  std::vector<double> weights = spec.priors.empty() ? std::vector<double>(spec.classes, 1.0) : spec.priors;
  std::discrete_distribution<std::int32_t> pick(weights.begin(), weights.end());
  std::vector<Utterance> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Utterance u;
    char id[32];
    std::snprintf(id, sizeof id, "%s-%05zu", prefix.c_str(), n);
    u.id = id;
    u.dim = spec.dim;
    const std::size_t target = utt_len(rng);
    while (u.frames < target) {
      const std::int32_t cls = pick(rng);
      const std::size_t len = seg_len(rng);
      const double centre = (static_cast<double>(len) - 1.0) / 2.0;
      for (std::size_t p = 0; p < len; ++p) {
        const double offset = static_cast<double>(p) - centre;
        for (std::size_t d = 0; d < spec.dim; ++d) {
          const double v = tpl.means[cls][d] + offset * tpl.slopes[cls][d] + spec.noise * gauss(rng);
          u.features.push_back(static_cast<float>(v));
        }
        u.labels.push_back(cls);
      }
      u.frames += len;
    }
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace

SynthDataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  SynthDataset ds;
  ds.templates = make_templates(spec);
  ds.train = make_split(spec, ds.templates, spec.train_utterances, 1, "train");
  ds.valid = make_split(spec, ds.templates, spec.valid_utterances, 2, "valid");
  ds.test = make_split(spec, ds.templates, spec.test_utterances, 3, "test");
  return ds;
}

}  // namespace qnn
