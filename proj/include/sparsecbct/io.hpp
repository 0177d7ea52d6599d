#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "sparsecbct/volume.hpp"

namespace sparsecbct {

using json = nlohmann::json;

/// A `.vol`/`.proj` artifact is two files sharing a stem: `<stem>.json`
/// (header) and `<stem>.raw` (little-endian float32 payload).
struct FilePair {
  std::filesystem::path header;
  std::filesystem::path payload;
};

/// Accepts `<stem>`, `<stem>.vol`, `<stem>.proj`, `<stem>.ckpt`, `<stem>.json` or
/// `<stem>.raw`.
FilePair file_pair(const std::filesystem::path& path);

json to_json(const VolumeHeader& header);
VolumeHeader volume_header_from_json(const json& j);

void write_volume(const VoxelVolume& volume, const std::filesystem::path& path);
VoxelVolume read_volume(const std::filesystem::path& path);

void write_projections(const ProjectionStack& stack, const std::filesystem::path& path);
ProjectionStack read_projections(const std::filesystem::path& path);

void write_f32le(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32le(const std::filesystem::path& path, std::size_t expected_count);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Hash over both files of a `.vol`/`.proj` pair.
std::string artifact_hash(const std::filesystem::path& path);

}  // namespace sparsecbct
