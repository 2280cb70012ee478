// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "rway/model.hpp"
#include "rway/train.hpp"

namespace rway {

/// Binary checkpoint layout, all integers little-endian:
///
///   "RWAY" | u32 version | u64 header length | header JSON (space padded so
///   the tensor section starts on a 256-byte boundary) | u64 tensor count |
///   per tensor: u32 name length, name bytes, u32 rank, u64 dims[rank],
///   f64 payload | u32 CRC-32 of the tensor section
///
/// The header holds {"model": ModelConfig, "train": TrainConfig, "step": n}.
/// Tensors are the model parameters followed by "adam.m.<name>",
/// "adam.v.<name>" and "train.loss_history".
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

/// Throws FormatError for a wrong magic, unsupported version, truncation,
/// CRC mismatch, or tensors that disagree with the header config. When
/// `model_override` is given the tensors must fit that config instead,
/// which lets a standard checkpoint be opened as rewired_dot.
TrainState load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& model_override = std::nullopt);

}  // namespace rway
