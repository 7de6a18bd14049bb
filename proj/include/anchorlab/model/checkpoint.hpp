// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "anchorlab/tensor.hpp"

namespace anchorlab {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t n_heads = 2;
  std::size_t d_model = 32;
  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 128;
  double layernorm_eps = 1e-5;
  /// Output head shares the token embedding matrix.
  bool tied_head = true;

  std::size_t d_head() const noexcept { return d_model / n_heads; }
  std::size_t d_ff() const noexcept { return 4 * d_model; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Canonical tensor names and shapes required by `config`, in storage order.
std::vector<std::pair<std::string, Shape>> required_tensors(const ModelConfig& config);

/// Container format identifiers.
inline constexpr const char* kCheckpointMagic = "ANCHORLAB-CKPT";
inline constexpr int kCheckpointVersion = 1;

/// Named tensors plus architecture config and free-form provenance metadata.
/// Weight matrices are stored [in, out] so a projection is x * W.
template <typename T>
struct Checkpoint {
  ModelConfig config;
  std::map<std::string, Tensor<T>> tensors;
  std::map<std::string, std::string> meta;

  const Tensor<T>& at(const std::string& name) const;
  /// Checks every required tensor is present with the exact shape.
  void validate() const;
};

/// Directory container: manifest.json (magic, version, config, meta, tensor
/// table with dtype/shape/byte offset/length) and tensors.bin (row-major,
/// little-endian). Tensors are written at the element kind of T.
template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& dir);

/// Loads and converts to element kind T. Unknown tensors are dropped with a
/// warning appended to `warnings` (if given).
template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr);

/// Raw tensor blobs without a model config; used for cached prefix states.
template <typename T>
void save_tensor_blob(const std::filesystem::path& dir, const std::map<std::string, Tensor<T>>& tensors,
                      const std::map<std::string, std::string>& meta);
template <typename T>
std::map<std::string, Tensor<T>> load_tensor_blob(const std::filesystem::path& dir,
                                                  std::map<std::string, std::string>* meta = nullptr);

}  // namespace anchorlab
