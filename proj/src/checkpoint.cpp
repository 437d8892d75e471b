#include "qnn/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace qnn {

namespace {

constexpr char kMagic[4] = {'Q', 'N', 'N', '1'};

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 0 : 1;
}

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  char b[8];
  for (int i = 0; i < bytes; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, bytes);
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  void bytes(char* dst, std::size_t n, const std::string& what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError("checkpoint: truncated while reading " + what, offset_ + in_.gcount());
    }
    offset_ += n;
  }

  std::uint64_t le(int n, const std::string& what) {
    unsigned char b[8];
    bytes(reinterpret_cast<char*>(b), n, what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::uint64_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t read_header(Reader& r) {
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("checkpoint: bad magic", 0);
  return r.le(8, "digest");
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  return in;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParamList<T>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic, 4);
  put_le(out, fnv1a64(config.serialize()), 8);
  put_le(out, params.size(), 4);
  for (const auto& p : params) {
    put_le(out, p.name.size(), 4);
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_le(out, dtype_tag<T>(), 1);
    const Shape& shape = p.tensor.shape();
    put_le(out, shape.size(), 4);
    for (std::size_t e : shape) put_le(out, e, 4);
    for (T v : p.tensor.data()) {
      if constexpr (sizeof(T) == 4) {
        put_le(out, std::bit_cast<std::uint32_t>(v), 4);
      } else {
        put_le(out, std::bit_cast<std::uint64_t>(v), 8);
      }
    }
  }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string checkpoint_digest(const std::filesystem::path& path) {
  auto in = open_in(path);
  Reader r(in);
  return hex(read_header(r));
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, const ModelConfig& config, ParamList<T>& params) {
  auto in = open_in(path);
  Reader r(in);
  const std::string stored = hex(read_header(r));
  if (stored != config.digest()) throw DigestMismatchError(config.digest(), stored);
  const std::uint64_t count_offset = r.offset();
  const std::uint64_t count = r.le(4, "record count");
  if (count != params.size()) {
    throw FormatError("checkpoint: " + std::to_string(count) + " records, model has " +
                          std::to_string(params.size()) + " parameters",
                      count_offset);
  }
  for (auto& p : params) {
    const std::uint64_t record_offset = r.offset();
    std::string name(r.le(4, "name length"), '\0');
    if (!name.empty()) r.bytes(name.data(), name.size(), "name");
    if (name != p.name) {
      throw FormatError("checkpoint: record '" + name + "' where '" + p.name + "' was expected", record_offset);
    }
    const std::uint64_t dtype = r.le(1, "dtype");
    if (dtype != dtype_tag<T>()) {
      throw FormatError("checkpoint: '" + name + "' has dtype tag " + std::to_string(dtype), record_offset);
    }
    Shape shape(r.le(4, "rank"));
    for (auto& e : shape) e = r.le(4, "extent");
    if (shape != p.tensor.shape()) {
      throw FormatError("checkpoint: '" + name + "' has shape " + to_string(shape) + ", model expects " +
                            to_string(p.tensor.shape()),
                        record_offset);
    }
    auto values = p.tensor.mutable_data();
    const std::string what = "data of " + name;
    for (auto& v : values) {
      if constexpr (sizeof(T) == 4) {
        v = std::bit_cast<float>(static_cast<std::uint32_t>(r.le(4, what)));
      } else {
        v = std::bit_cast<double>(r.le(8, what));
      }
    }
  }
}

template void save_checkpoint(const std::filesystem::path&, const ModelConfig&, const ParamList<float>&);
template void save_checkpoint(const std::filesystem::path&, const ModelConfig&, const ParamList<double>&);
template void load_checkpoint(const std::filesystem::path&, const ModelConfig&, ParamList<float>&);
template void load_checkpoint(const std::filesystem::path&, const ModelConfig&, ParamList<double>&);

}  // namespace qnn
