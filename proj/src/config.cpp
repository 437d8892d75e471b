#include "qnn/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qnn/data.hpp"

namespace qnn {

std::string to_string(FrontEnd v) {
  switch (v) {
    case FrontEnd::kR2HNorm: return "r2h-norm";
    case FrontEnd::kR2H: return "r2h";
    case FrontEnd::kNaiveQuat: return "naive-quat";
    case FrontEnd::kIdentity: return "identity";
  }
  return "?";
}

std::string to_string(StackKind v) { return v == StackKind::kQLSTM ? "qlstm" : "lstm"; }
std::string to_string(MergeMode v) { return v == MergeMode::kSum ? "sum" : "concat"; }
std::string to_string(LrRule v) { return v == LrRule::kStall ? "stall" : "literal"; }
std::string to_string(Precision v) { return v == Precision::kF32 ? "f32" : "f64"; }
std::string to_string(DropoutGranularity v) {
  return v == DropoutGranularity::kQuaternion ? "quaternion" : "component";
}

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename V>
V parse_value(const std::string& key, const std::string& text) {
  V value{};
  auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return value;
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void ModelConfig::validate() const {
  const bool quaternion_stack = stack == StackKind::kQLSTM && depth > 0;
  if (input_dim == 0) throw ConfigError("input-dim must be positive");
  if (classes == 0) throw ConfigError("classes must be positive");
  if (front_end == FrontEnd::kR2HNorm || front_end == FrontEnd::kR2H) {
    if (r2h_size == 0 || r2h_size % 4 != 0) {
      throw ConfigError("r2h-size " + std::to_string(r2h_size) + " must be a positive multiple of 4");
    }
  }
  if (depth > 0 && hidden == 0) throw ConfigError("hidden must be positive");
  if (quaternion_stack && hidden % 4 != 0) {
    throw ConfigError("hidden " + std::to_string(hidden) + " must be a multiple of 4 for a qlstm stack");
  }
  if (quaternion_stack && front_end == FrontEnd::kIdentity && input_dim % 4 != 0) {
    throw ConfigError("identity front-end feeding a qlstm stack needs input-dim divisible by 4, got " +
                      std::to_string(input_dim));
  }
  const bool quaternion_dropout_used =
      dropout > 0 && effective_dropout_granularity() == DropoutGranularity::kQuaternion;
  if (quaternion_dropout_used && front_end_width() % 4 != 0) {
    throw ConfigError("quaternion dropout needs a front-end width divisible by 4");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("batch-size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(lr_threshold > 0.0)) throw ConfigError("lr-threshold must be positive");
  if (!(norm_eps > 0.0)) throw ConfigError("norm-eps must be positive");
}

std::size_t ModelConfig::front_end_width() const {
  switch (front_end) {
    case FrontEnd::kR2HNorm:
    case FrontEnd::kR2H: return r2h_size;
    case FrontEnd::kNaiveQuat: return naive_quat_width(input_dim);
    case FrontEnd::kIdentity: return input_dim;
  }
  return input_dim;
}

std::size_t ModelConfig::layer_output_width() const {
  return merge == MergeMode::kSum ? hidden : 2 * hidden;
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "front-end = " << to_string(front_end) << "\n"
     << "input-dim = " << input_dim << "\n"
     << "r2h-size = " << r2h_size << "\n"
     << "r2h-activation = " << to_string(r2h_activation) << "\n"
     << "stack = " << to_string(stack) << "\n"
     << "depth = " << depth << "\n"
     << "hidden = " << hidden << "\n"
     << "merge = " << to_string(merge) << "\n"
     << "classes = " << classes << "\n"
     << "dropout = " << format_double(dropout) << "\n"
     << "dropout-granularity = " << to_string(dropout_granularity) << "\n"
     << "epochs = " << epochs << "\n"
     << "batch-size = " << batch_size << "\n"
     << "lr = " << format_double(lr) << "\n"
     << "lr-rule = " << to_string(lr_rule) << "\n"
     << "lr-threshold = " << format_double(lr_threshold) << "\n"
     << "norm-eps = " << format_double(norm_eps) << "\n"
     << "seed = " << seed << "\n"
     << "precision = " << to_string(precision) << "\n";
  return os.str();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string ModelConfig::digest() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(serialize())));
  return buf;
}

void ModelConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  if (key == "front-end") {
    if (value == "r2h-norm") front_end = FrontEnd::kR2HNorm;
    else if (value == "r2h") front_end = FrontEnd::kR2H;
    else if (value == "naive-quat") front_end = FrontEnd::kNaiveQuat;
    else if (value == "identity") front_end = FrontEnd::kIdentity;
    else throw ConfigError("unknown front-end '" + value + "' (expected r2h-norm|r2h|naive-quat|identity)");
  } else if (key == "input-dim") {
    input_dim = parse_value<std::size_t>(key, value);
  } else if (key == "r2h-size") {
    r2h_size = parse_value<std::size_t>(key, value);
  } else if (key == "r2h-activation") {
    r2h_activation = parse_activation(value);
    if (r2h_activation == Activation::kSigmoid) throw ConfigError("r2h-activation must be tanh|hardtanh|relu");
  } else if (key == "stack") {
    if (value == "qlstm") stack = StackKind::kQLSTM;
    else if (value == "lstm") stack = StackKind::kLSTM;
    else throw ConfigError("unknown stack '" + value + "' (expected qlstm|lstm)");
  } else if (key == "depth") {
    depth = parse_value<std::size_t>(key, value);
  } else if (key == "hidden") {
    hidden = parse_value<std::size_t>(key, value);
  } else if (key == "merge") {
    if (value == "sum") merge = MergeMode::kSum;
    else if (value == "concat") merge = MergeMode::kConcat;
    else throw ConfigError("unknown merge '" + value + "' (expected sum|concat)");
  } else if (key == "classes") {
    classes = parse_value<std::size_t>(key, value);
  } else if (key == "dropout") {
    dropout = parse_value<double>(key, value);
  } else if (key == "dropout-granularity") {
    if (value == "quaternion") dropout_granularity = DropoutGranularity::kQuaternion;
    else if (value == "component") dropout_granularity = DropoutGranularity::kComponent;
    else throw ConfigError("unknown dropout-granularity '" + value + "'");
  } else if (key == "epochs") {
    epochs = parse_value<std::size_t>(key, value);
  } else if (key == "batch-size") {
    batch_size = parse_value<std::size_t>(key, value);
  } else if (key == "lr") {
    lr = parse_value<double>(key, value);
  } else if (key == "lr-rule") {
    if (value == "stall") lr_rule = LrRule::kStall;
    else if (value == "literal") lr_rule = LrRule::kLiteral;
    else throw ConfigError("unknown lr-rule '" + value + "' (expected stall|literal)");
  } else if (key == "lr-threshold") {
    lr_threshold = parse_value<double>(key, value);
  } else if (key == "norm-eps") {
    norm_eps = parse_value<double>(key, value);
  } else if (key == "seed") {
    seed = parse_value<std::uint64_t>(key, value);
  } else if (key == "precision") {
    if (value == "f32") precision = Precision::kF32;
    else if (value == "f64") precision = Precision::kF64;
    else throw ConfigError("unknown precision '" + value + "' (expected f32|f64)");
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

std::vector<std::string> ModelConfig::apply(const std::string& text) {
  std::vector<std::string> keys;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    keys.push_back(trim(std::string_view(body).substr(0, eq)));
    set(keys.back(), body.substr(eq + 1));
  }
  return keys;
}

std::vector<std::string> ModelConfig::apply_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return apply(buf.str());
}

}  // namespace qnn
