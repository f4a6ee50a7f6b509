#pragma once

#include <filesystem>
#include <string>

#include "fewtab/backbone.hpp"

namespace fewtab {

// Binary weight container, little-endian float32 payloads. A JSON manifest
// with tensor shapes and a content hash is written next to the binary.
void save_weights(const Backbone<float>& net, const std::filesystem::path& path);

// Rebuilds the backbone described by the container header and restores every
// tensor, running statistics included. Truncated or mismatched files raise
// FormatError.
Backbone<float> load_weights(const std::filesystem::path& path);

std::string weights_manifest_json(const Backbone<float>& net, uint64_t content_hash);

}  // namespace fewtab
