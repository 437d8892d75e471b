#pragma once

// "QNN1" checkpoint container, all integers little-endian:
//   magic "QNN1" | u64 config digest | u32 record count |
//   per record: u32 name length, name bytes, u8 dtype (0 = f32, 1 = f64),
//               u32 rank, u32 extents[rank], raw element data.

#include <filesystem>
#include <string>

#include "qnn/config.hpp"
#include "qnn/layers.hpp"

namespace qnn {

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParamList<T>& params);

/// Digest stored in a checkpoint, as 16 hex digits.
std::string checkpoint_digest(const std::filesystem::path& path);

/// Copies stored values into `params`. Names, order, dtype and shapes must
/// match; the stored digest must equal config.digest().
template <typename T>
void load_checkpoint(const std::filesystem::path& path, const ModelConfig& config, ParamList<T>& params);

}  // namespace qnn
