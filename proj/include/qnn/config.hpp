#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "qnn/layers.hpp"

namespace qnn {

enum class FrontEnd { kR2HNorm, kR2H, kNaiveQuat, kIdentity };
enum class StackKind { kQLSTM, kLSTM };
enum class MergeMode { kSum, kConcat };
enum class LrRule { kStall, kLiteral };
enum class Precision { kF32, kF64 };

std::string to_string(FrontEnd v);
std::string to_string(StackKind v);
std::string to_string(MergeMode v);
std::string to_string(LrRule v);
std::string to_string(Precision v);
std::string to_string(DropoutGranularity v);

/// Architecture and training hyperparameters. Serializes to `key = value`
/// lines, which is also the config-file format read by `apply`.
struct ModelConfig {
  FrontEnd front_end = FrontEnd::kR2HNorm;
  std::size_t input_dim = 40;
  std::size_t r2h_size = 1024;
  Activation r2h_activation = Activation::kTanh;
  StackKind stack = StackKind::kQLSTM;
  std::size_t depth = 4;
  std::size_t hidden = 1024;  // real width of every recurrent layer
  MergeMode merge = MergeMode::kSum;
  std::size_t classes = 4;
  double dropout = 0.2;
  DropoutGranularity dropout_granularity = DropoutGranularity::kQuaternion;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  LrRule lr_rule = LrRule::kStall;
  double lr_threshold = 1e-3;
  double norm_eps = 1e-12;
  std::uint64_t seed = 1;
  Precision precision = Precision::kF32;

  /// Throws ConfigError describing the first inconsistency.
  void validate() const;

  /// Real width the recurrent stack receives from the front-end.
  std::size_t front_end_width() const;
  // Real LSTM stacks have no quaternions to keep whole; they drop per component.
  DropoutGranularity effective_dropout_granularity() const {
    return stack == StackKind::kLSTM ? DropoutGranularity::kComponent : dropout_granularity;
  }
  /// Real width of each stack layer's output (after the direction merge).
  std::size_t layer_output_width() const;

  /// Canonical `key = value\n` lines in a fixed key order.
  std::string serialize() const;
  /// FNV-1a 64 over serialize(), as 16 lowercase hex digits.
  std::string digest() const;

  /// Sets one key (flag spelling without the leading dashes).
  void set(const std::string& key, const std::string& value);
  /// Applies every `key = value` line of a config text; `#` starts a comment.
  /// Returns the keys that were set.
  std::vector<std::string> apply(const std::string& text);
  std::vector<std::string> apply_file(const std::filesystem::path& path);
};

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace qnn
