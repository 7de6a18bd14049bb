// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "anchorlab/tensor.hpp"

namespace anchorlab {

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Hash over (name, shape, raw element bytes) of every tensor in name order.
template <typename T>
std::string tensors_hash(const std::map<std::string, Tensor<T>>& tensors);

}  // namespace anchorlab
