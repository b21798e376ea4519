#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "slasd/matrix.hpp"

namespace slasd {

// FVEM binary layout (little endian):
//   "FVEM" | u16 version=1 | u16 reserved=0 | u32 rows | u32 cols | rows*cols f32 row-major
inline constexpr std::uint16_t kFvemVersion = 1;
inline constexpr std::size_t kFvemHeaderBytes = 16;

std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& m);
EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

// Reads only the header; returns {rows, cols}. Used by validation without loading payloads.
std::pair<std::uint32_t, std::uint32_t> peek_embedding_shape(const std::filesystem::path& path);

}  // namespace slasd
