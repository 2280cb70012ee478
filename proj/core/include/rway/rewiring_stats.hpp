// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "rway/model.hpp"

namespace rway {

/// Down-scale factors of a rewired model averaged over layers and windows.
///
/// Per-position statistics pool the eligible entries (j <= i - 2, j != 0)
/// only. Source 0 is always kept and is reported as exactly 1; positions
/// without eligible entries have no value.
struct RewiringStats {
  std::size_t seq_len = 0;
  std::size_t windows = 0;
  std::size_t layers = 0;
  Tensor mean_beta;  // (n, n), zero above the diagonal
  std::vector<std::optional<double>> source_mean, source_std;
  std::vector<std::optional<double>> destination_mean, destination_std;
};

/// Throws ConfigError for a standard-attention model and InputError when the
/// data holds fewer than one window.
RewiringStats analyze_rewiring(const Model& model, std::span<const std::size_t> tokens,
                               std::size_t seq_len, std::size_t n_batches);

/// Matrix rows use null above the diagonal; vectors use null where undefined.
nlohmann::json to_json(const RewiringStats& stats);

}  // namespace rway
