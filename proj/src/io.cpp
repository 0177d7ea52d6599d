#include "sparsecbct/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "sparsecbct/errors.hpp"

namespace sparsecbct {

namespace fs = std::filesystem;

FilePair file_pair(const fs::path& path) {
  fs::path stem = path;
  const auto ext = path.extension().string();
  if (ext == ".vol" || ext == ".proj" || ext == ".ckpt" || ext == ".json" || ext == ".raw") {
    stem.replace_extension();
  }
  fs::path header = stem;
  header += ".json";
  fs::path payload = stem;
  payload += ".raw";
  return {header, payload};
}

namespace {

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

Vec3 vec_from(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array() || j.at(key).size() != 3) {
    fail(ErrorKind::MalformedHeader, std::string("header field '") + key + "' must be a 3-array");
  }
  const auto& a = j.at(key);
  for (const auto& e : a) {
    if (!e.is_number()) fail(ErrorKind::MalformedHeader, std::string("non-numeric '") + key + "'");
  }
  return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key)) fail(ErrorKind::MalformedHeader, std::string("header missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::MalformedHeader, std::string("header field '") + key + "': " + e.what());
  }
}

json parse_header(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "no such file: " + path.string());
  const std::string text = read_text(path);
  try {
    json j = json::parse(text);
    if (!j.is_object()) fail(ErrorKind::MalformedHeader, "header is not a JSON object: " + path.string());
    return j;
  } catch (const json::parse_error& e) {
    fail(ErrorKind::MalformedHeader, "cannot parse header " + path.string() + ": " + e.what());
  }
}

void check_dtype(const std::string& dtype) {
  if (dtype != "f32le") fail(ErrorKind::MalformedHeader, "unsupported dtype '" + dtype + "'");
}

}  // namespace

json to_json(const VolumeHeader& header) {
  json j;
  j["dims"] = json::array({header.dims.nx, header.dims.ny, header.dims.nz});
  j["spacing_mm"] = vec_json(header.spacing);
  j["origin_mm"] = vec_json(header.origin);
  j["dtype"] = header.dtype;
  j["unit"] = to_string(header.unit);
  return j;
}

VolumeHeader volume_header_from_json(const json& j) {
  VolumeHeader h;
  const auto dims = field<std::vector<long long>>(j, "dims");
  if (dims.size() != 3 || dims[0] < 1 || dims[1] < 1 || dims[2] < 1) {
    fail(ErrorKind::MalformedHeader, "header 'dims' must be three positive integers");
  }
  h.dims = {static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
            static_cast<std::size_t>(dims[2])};
  h.spacing = vec_from(j, "spacing_mm");
  if (h.spacing.x <= 0 || h.spacing.y <= 0 || h.spacing.z <= 0) {
    fail(ErrorKind::MalformedHeader, "header 'spacing_mm' must be positive");
  }
  h.origin = vec_from(j, "origin_mm");
  h.dtype = field<std::string>(j, "dtype");
  check_dtype(h.dtype);
  h.unit = unit_from_string(field<std::string>(j, "unit"));
  return h;
}

void write_volume(const VoxelVolume& volume, const fs::path& path) {
  const auto files = file_pair(path);
  write_json(files.header, to_json(volume.header()));
  write_f32le(files.payload, volume.values());
}

VoxelVolume read_volume(const fs::path& path) {
  const auto files = file_pair(path);
  const VolumeHeader h = volume_header_from_json(parse_header(files.header));
  auto values = read_f32le(files.payload, h.dims.count());
  return VoxelVolume(h.dims, h.spacing, h.origin, h.unit, std::move(values));
}

void write_projections(const ProjectionStack& stack, const fs::path& path) {
  const auto files = file_pair(path);
  json j;
  j["n_views"] = stack.n_views();
  j["det"] = json::array({stack.n_u(), stack.n_v()});
  j["pitch_mm"] = json::array({stack.pitch_u(), stack.pitch_v()});
  j["angles_deg"] = stack.angles_deg();
  j["dtype"] = "f32le";
  j["unit"] = to_string(Unit::LineIntegral);
  write_json(files.header, j);
  write_f32le(files.payload, stack.values());
}

ProjectionStack read_projections(const fs::path& path) {
  const auto files = file_pair(path);
  const json j = parse_header(files.header);
  const auto n_views = field<std::size_t>(j, "n_views");
  const auto det = field<std::vector<std::size_t>>(j, "det");
  const auto pitch = field<std::vector<double>>(j, "pitch_mm");
  const auto angles = field<std::vector<double>>(j, "angles_deg");
  check_dtype(field<std::string>(j, "dtype"));
  if (det.size() != 2 || pitch.size() != 2 || angles.size() != n_views || det[0] == 0 ||
      det[1] == 0 || pitch[0] <= 0 || pitch[1] <= 0) {
    fail(ErrorKind::MalformedHeader, "inconsistent projection header: " + files.header.string());
  }
  ProjectionStack stack;
  try {
    stack = ProjectionStack(det[0], det[1], pitch[0], pitch[1], angles);
  } catch (const Error& e) {
    fail(ErrorKind::MalformedHeader, e.what());
  }
  auto values = read_f32le(files.payload, det[0] * det[1] * n_views);
  std::copy(values.begin(), values.end(), stack.values().begin());
  return stack;
}

void write_f32le(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                static_cast<unsigned char>(bits >> 16),
                                static_cast<unsigned char>(bits >> 24)};
      out.write(reinterpret_cast<const char*>(bytes), 4);
    }
  }
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<float> read_f32le(const fs::path& path, std::size_t expected_count) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "no such file: " + path.string());
  const auto bytes = fs::file_size(path);
  if (bytes != expected_count * sizeof(float)) {
    std::ostringstream msg;
    msg << "payload " << path.string() << " has " << bytes << " bytes, header implies "
        << expected_count * sizeof(float);
    fail(ErrorKind::PayloadLength, msg.str());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
  std::vector<float> values(expected_count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) fail(ErrorKind::Io, "read failed: " + path.string());
  if constexpr (std::endian::native != std::endian::little) {
    for (float& v : values) {
      auto bits = std::bit_cast<std::uint32_t>(v);
      bits = ((bits & 0xFFu) << 24) | ((bits & 0xFF00u) << 8) | ((bits >> 8) & 0xFF00u) | (bits >> 24);
      v = std::bit_cast<float>(bits);
    }
  }
  return values;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path.string());
  out << text;
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::Io, "no such file: " + path.string());
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Validation, "cannot parse JSON " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string sha256_hex(std::span<const unsigned char> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::Io, "SHA-256 digest failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  }
  return hex.str();
}

std::string sha256_file(const fs::path& path) {
  const std::string text = read_text(path);
  return sha256_hex({reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

std::string artifact_hash(const fs::path& path) {
  const auto files = file_pair(path);
  std::string combined = read_text(files.header);
  combined += read_text(files.payload);
  return sha256_hex({reinterpret_cast<const unsigned char*>(combined.data()), combined.size()});
}

}  // namespace sparsecbct
