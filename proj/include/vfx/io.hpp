#pragma once

#include "vfx/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vfx {

/// Malformed, corrupted or incompatible file contents.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a file cannot be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// Raw video: "RVT1", u32 T, H, W, C, then f32 samples frame by frame in
// row-major H x W x C order. All little-endian.

inline constexpr std::size_t kRvtHeaderBytes = 20;

struct RvtHeader {
  std::uint32_t frames = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::uint64_t file_bytes() const { return kRvtHeaderBytes + 4ull * frames * height * width * channels; }
};

std::vector<std::uint8_t> encode_rvt(const VideoClip& clip);
VideoClip decode_rvt(std::span<const std::uint8_t> bytes);
RvtHeader decode_rvt_header(std::span<const std::uint8_t> bytes);

void write_rvt(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_rvt(const std::filesystem::path& path);

// Checkpoint: "EFCK", u32 version, u32-length config text, u32 tensor count,
// then per tensor (u32 name length, name, u32 rank, u32 dims, u8 dtype, raw
// data), then CRC32 of everything before it.

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1, kU64 = 2 };

struct StoredTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  DType dtype = DType::kF32;
  std::vector<std::uint8_t> bytes;

  static StoredTensor f32(std::string name, const Shape& shape, const Buffer<float>& values);
  static StoredTensor f64(std::string name, const Shape& shape, const Buffer<double>& values);
  static StoredTensor u64(std::string name, std::uint64_t value);

  std::size_t count() const;
  Buffer<float> as_f32() const;
  Buffer<double> as_f64() const;
  std::uint64_t as_u64() const;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::vector<StoredTensor> tensors;

  const StoredTensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 8-bit RGB or grayscale PNG of one C x H x W frame with values in [0,1].
void write_png(const std::filesystem::path& path, const float* chw, int channels, int height, int width);
/// Single-frame clip; grayscale and palette images expand to RGB, alpha is dropped.
VideoClip read_png(const std::filesystem::path& path);

struct ManifestEntry {
  std::string path;
  Effect broad = Effect::kMelt;
  int fine = 0;
  int native_length = 0;
  std::uint64_t seed = 0;
};

/// CSV with header `path,broad,fine,native_length,seed`.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

}  // namespace vfx
