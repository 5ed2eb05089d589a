#include "vfx/io.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace vfx {
namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, const char* what) : b_(b), what_(what) {}

  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) {
      throw FormatError(std::string(what_) + ": truncated at byte " + std::to_string(pos_) + " (need " +
                        std::to_string(n) + " more)");
    }
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::span<const std::uint8_t> raw(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> b_;
  const char* what_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in bounded chunks.
  std::size_t off = 0;
  while (off < b.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(b.size() - off, 1u << 30));
    crc = crc32(crc, b.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU64: return 8;
  }
  throw FormatError("unknown dtype tag " + std::to_string(static_cast<int>(t)));
}

template <typename T>
std::vector<std::uint8_t> le_bytes(const T* v, std::size_t n) {
  std::vector<std::uint8_t> out(n * sizeof(T));
  for (std::size_t i = 0; i < n; ++i) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    const U bits = std::bit_cast<U>(v[i]);
    for (std::size_t k = 0; k < sizeof(T); ++k) out[i * sizeof(T) + k] = static_cast<std::uint8_t>(bits >> (8 * k));
  }
  return out;
}

template <typename T>
std::vector<T> from_le(const std::vector<std::uint8_t>& b) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  std::vector<T> out(b.size() / sizeof(T));
  for (std::size_t i = 0; i < out.size(); ++i) {
    U bits = 0;
    for (std::size_t k = 0; k < sizeof(T); ++k) bits |= static_cast<U>(b[i * sizeof(T) + k]) << (8 * k);
    out[i] = std::bit_cast<T>(bits);
  }
  return out;
}

std::vector<std::uint32_t> dims_of(const Shape& s) {
  std::vector<std::uint32_t> d;
  for (int i = 0; i < s.rank(); ++i) d.push_back(static_cast<std::uint32_t>(s[i]));
  return d;
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

std::vector<std::uint8_t> encode_rvt(const VideoClip& clip) {
  Writer w;
  w.raw("RVT1");
  w.u32(static_cast<std::uint32_t>(clip.length));
  w.u32(static_cast<std::uint32_t>(clip.height));
  w.u32(static_cast<std::uint32_t>(clip.width));
  w.u32(static_cast<std::uint32_t>(clip.channels));
  const int plane = clip.height * clip.width;
  for (int t = 0; t < clip.length; ++t) {
    const float* f = clip.frame_data(t);
    for (int p = 0; p < plane; ++p)
      for (int c = 0; c < clip.channels; ++c) w.f32(f[c * plane + p]);
  }
  return std::move(w.bytes());
}

RvtHeader decode_rvt_header(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "rvt");
  if (r.str(4) != "RVT1") throw FormatError("rvt: bad magic (expected RVT1)");
  RvtHeader h;
  h.frames = r.u32();
  h.height = r.u32();
  h.width = r.u32();
  h.channels = r.u32();
  return h;
}

VideoClip decode_rvt(std::span<const std::uint8_t> bytes) {
  const RvtHeader h = decode_rvt_header(bytes);
  if (bytes.size() != h.file_bytes()) {
    throw FormatError("rvt: header describes " + std::to_string(h.file_bytes()) + " bytes, file has " +
                      std::to_string(bytes.size()));
  }
  VideoClip clip = VideoClip::blank(static_cast<int>(h.frames), static_cast<int>(h.height), static_cast<int>(h.width),
                                    static_cast<int>(h.channels));
  Reader r(bytes.subspan(kRvtHeaderBytes), "rvt");
  const int plane = clip.height * clip.width;
  for (int t = 0; t < clip.length; ++t) {
    float* f = clip.frame_data(t);
    for (int p = 0; p < plane; ++p)
      for (int c = 0; c < clip.channels; ++c) {
        const float v = r.f32();
        if (!(v >= 0.0f && v <= 1.0f)) {
          throw FormatError("rvt: sample outside [0,1] in frame " + std::to_string(t));
        }
        f[c * plane + p] = v;
      }
  }
  clip.native_length = clip.length;
  return clip;
}

void write_rvt(const std::filesystem::path& path, const VideoClip& clip) {
  if (clip.data.size() && (clip.data.minCoeff() < 0.0f || clip.data.maxCoeff() > 1.0f)) {
    throw ContractError("rvt: samples must lie in [0,1]");
  }
  write_file_atomic(path, encode_rvt(clip));
}

VideoClip read_rvt(const std::filesystem::path& path) {
  try {
    return decode_rvt(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

StoredTensor StoredTensor::f32(std::string name, const Shape& shape, const Buffer<float>& values) {
  return {std::move(name), dims_of(shape), DType::kF32, le_bytes(values.data(), static_cast<std::size_t>(values.size()))};
}

StoredTensor StoredTensor::f64(std::string name, const Shape& shape, const Buffer<double>& values) {
  return {std::move(name), dims_of(shape), DType::kF64, le_bytes(values.data(), static_cast<std::size_t>(values.size()))};
}

StoredTensor StoredTensor::u64(std::string name, std::uint64_t value) {
  return {std::move(name), {1}, DType::kU64, le_bytes(&value, 1)};
}

std::size_t StoredTensor::count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Buffer<float> StoredTensor::as_f32() const {
  if (dtype != DType::kF32) throw FormatError("tensor '" + name + "' is not f32");
  const auto v = from_le<float>(bytes);
  return Eigen::Map<const Buffer<float>>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Buffer<double> StoredTensor::as_f64() const {
  if (dtype != DType::kF64) throw FormatError("tensor '" + name + "' is not f64");
  const auto v = from_le<double>(bytes);
  return Eigen::Map<const Buffer<double>>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::uint64_t StoredTensor::as_u64() const {
  if (dtype != DType::kU64 || count() != 1) throw FormatError("tensor '" + name + "' is not a u64 scalar");
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(bytes[static_cast<size_t>(k)]) << (8 * k);
  return v;
}

const StoredTensor& Checkpoint::at(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw FormatError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  return std::any_of(tensors.begin(), tensors.end(), [&](const StoredTensor& t) { return t.name == name; });
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw("EFCK");
  w.u32(ckpt.version);
  w.u32(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.raw(ckpt.config_text);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.bytes.size() != t.count() * dtype_size(t.dtype)) {
      throw ContractError("checkpoint tensor '" + t.name + "' has inconsistent byte length");
    }
    w.u32(static_cast<std::uint32_t>(t.name.size()));
    w.raw(t.name);
    w.u32(static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    w.u8(static_cast<std::uint8_t>(t.dtype));
    w.raw(t.bytes);
  }
  w.u32(crc32_of(w.bytes()));
  return std::move(w.bytes());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader head(bytes, "checkpoint");
  if (head.str(4) != "EFCK") throw FormatError("checkpoint: bad magic (expected EFCK)");
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: format version " + std::to_string(version) + " is not supported (this build reads " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < 12) throw FormatError("checkpoint: truncated");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4), "checkpoint");
  const std::uint32_t stored = tail.u32();
  const std::uint32_t actual = crc32_of(body);
  if (stored != actual) {
    std::ostringstream msg;
    msg << std::hex << "checkpoint: CRC mismatch (stored 0x" << stored << ", computed 0x" << actual << ")";
    throw FormatError(msg.str());
  }

  Reader r(body, "checkpoint");
  r.raw(8);
  Checkpoint ckpt;
  ckpt.version = version;
  ckpt.config_text = r.str(r.u32());
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    StoredTensor t;
    t.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    for (std::uint32_t k = 0; k < rank; ++k) t.dims.push_back(r.u32());
    const std::uint8_t tag = r.u8();
    if (tag > static_cast<std::uint8_t>(DType::kU64)) {
      throw FormatError("checkpoint: tensor '" + t.name + "' has unknown dtype tag " + std::to_string(tag));
    }
    t.dtype = static_cast<DType>(tag);
    const auto payload = r.raw(t.count() * dtype_size(t.dtype));
    t.bytes.assign(payload.begin(), payload.end());
    ckpt.tensors.push_back(std::move(t));
  }
  if (r.pos() != body.size()) throw FormatError("checkpoint: trailing bytes after tensor table");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  *err = msg;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const float* chw, int channels, int height, int width) {
  if (channels != 1 && channels != 3) throw DimensionError("png: need 1 or 3 channels, got " + std::to_string(channels));
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  const int plane = height * width;
  std::vector<png_byte> rows(static_cast<size_t>(plane * channels));
  for (int p = 0; p < plane; ++p)
    for (int c = 0; c < channels; ++c) {
      const float v = std::clamp(chw[c * plane + p], 0.0f, 1.0f);
      rows[static_cast<size_t>(p * channels + c)] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png write failed for '" + path.string() + "': " + err);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) png_write_row(png, rows.data() + static_cast<size_t>(y * width * channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

VideoClip read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open '" + path.string() + "' for reading");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  std::vector<png_byte> pixels;
  png_uint_32 width = 0, height = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png read failed for '" + path.string() + "': " + err);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * height);
  std::vector<png_bytep> rows(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = pixels.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  VideoClip clip = VideoClip::blank(1, static_cast<int>(height), static_cast<int>(width), 3);
  const int plane = clip.height * clip.width;
  for (int y = 0; y < clip.height; ++y)
    for (int x = 0; x < clip.width; ++x)
      for (int c = 0; c < 3; ++c)
        clip.data[c * plane + y * clip.width + x] = pixels[static_cast<size_t>(y) * stride + static_cast<size_t>(x * 3 + c)] / 255.0f;
  clip.native_length = 1;
  return clip;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ostringstream out;
  out << "path,broad,fine,native_length,seed\n";
  for (const auto& e : entries)
    out << e.path << ',' << effect_name(e.broad) << ',' << e.fine << ',' << e.native_length << ',' << e.seed << '\n';
  const std::string s = out.str();
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "path,broad,fine,native_length,seed") {
    throw FormatError(path.string() + ": missing manifest header");
  }
  std::vector<ManifestEntry> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 5) throw FormatError(path.string() + ":" + std::to_string(row) + ": expected 5 columns");
    try {
      out.push_back({cols[0], parse_effect(cols[1]), std::stoi(cols[2]), std::stoi(cols[3]), std::stoull(cols[4])});
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(row) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace vfx
