#pragma once

// Tensor bundles on disk: a directory holding `manifest.json` (name, shape,
// dtype "f64", byte offset per tensor, plus free-form metadata) and a binary
// file of concatenated row-major little-endian values.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "omniair/params.hpp"

namespace omniair {

/// Writes `tensors` to dir/bin_name and the manifest to dir/manifest.json.
/// Keys of `meta` are merged into the manifest's top level.
void write_bundle(const std::filesystem::path& dir, const ModelParams& tensors,
                  const nlohmann::json& meta, const std::string& bin_name = "params.bin");

struct Bundle {
  ModelParams tensors;
  nlohmann::json manifest;
};

Bundle read_bundle(const std::filesystem::path& dir);

/// 64-bit FNV-1a, used for config hashes.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

}  // namespace omniair
