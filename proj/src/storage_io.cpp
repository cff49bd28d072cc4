#include "flashdet/storage_io.hpp"

#include <png.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace flashdet {

namespace {

void append_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                             static_cast<std::uint8_t>(v >> 16),
                             static_cast<std::uint8_t>(v >> 24)};
  append_bytes(out, b, 4);
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
  append_u32(out, std::bit_cast<std::uint32_t>(v));
}

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

  void read(void* dst, std::size_t n, const char* what) {
    if (remaining() < n)
      throw FormatError(std::string("checkpoint truncated while reading ") + what);
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }

  std::uint8_t read_u8(const char* what) {
    std::uint8_t v = 0;
    read(&v, 1, what);
    return v;
  }

  std::uint32_t read_u32(const char* what) {
    std::uint8_t b[4];
    read(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  void read_f32_array(std::vector<float>& dst, const char* what) {
    for (float& v : dst) v = std::bit_cast<float>(read_u32(what));
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

constexpr std::uint8_t kConvKind = 0;
constexpr std::uint8_t kDenseKind = 1;
constexpr std::uint32_t kCheckpointVersion = 1;

void append_conv(std::vector<std::uint8_t>& out, const ConvKernel& k) {
  out.push_back(kConvKind);
  append_u32(out, static_cast<std::uint32_t>(k.k));
  append_u32(out, static_cast<std::uint32_t>(k.in_channels));
  append_u32(out, static_cast<std::uint32_t>(k.out_channels));
  for (const float v : k.weights) append_f32(out, v);
  for (const float v : k.bias) append_f32(out, v);
}

void append_dense(std::vector<std::uint8_t>& out, const DenseWeights& d) {
  out.push_back(kDenseKind);
  append_u32(out, static_cast<std::uint32_t>(d.in_features));
  append_u32(out, static_cast<std::uint32_t>(d.out_features));
  for (const float v : d.weights) append_f32(out, v);
  for (const float v : d.bias) append_f32(out, v);
}

void read_conv(ByteReader& r, ConvKernel& k, const char* name) {
  if (r.read_u8(name) != kConvKind)
    throw FormatError(std::string("checkpoint: expected conv layer for ") + name);
  const std::uint32_t side = r.read_u32(name);
  const std::uint32_t in_c = r.read_u32(name);
  const std::uint32_t out_c = r.read_u32(name);
  if (side != static_cast<std::uint32_t>(k.k) ||
      in_c != static_cast<std::uint32_t>(k.in_channels) ||
      out_c != static_cast<std::uint32_t>(k.out_channels))
    throw FormatError(std::string("checkpoint: ") + name + " dims " + std::to_string(side) +
                      "x" + std::to_string(in_c) + "x" + std::to_string(out_c) +
                      " do not match the fixed architecture");
  r.read_f32_array(k.weights, name);
  r.read_f32_array(k.bias, name);
}

void read_dense(ByteReader& r, DenseWeights& d, const char* name) {
  if (r.read_u8(name) != kDenseKind)
    throw FormatError(std::string("checkpoint: expected dense layer for ") + name);
  const std::uint32_t in_f = r.read_u32(name);
  const std::uint32_t out_f = r.read_u32(name);
  if (in_f != static_cast<std::uint32_t>(d.in_features) ||
      out_f != static_cast<std::uint32_t>(d.out_features))
    throw FormatError(std::string("checkpoint: ") + name + " dims " + std::to_string(in_f) +
                      "x" + std::to_string(out_f) + " do not match the fixed architecture");
  r.read_f32_array(d.weights, name);
  r.read_f32_array(d.bias, name);
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  std::string tail = s.substr(s.size() - suffix.size());
  std::transform(tail.begin(), tail.end(), tail.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  return tail == suffix;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

std::vector<std::uint8_t> read_png(const std::string& path, bool gray, unsigned& height,
                                   unsigned& width) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw FormatError("PNG read failed for " + path + ": " + img.message);
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buffer.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw FormatError("PNG decode failed for " + path + ": " + msg);
  }
  height = img.height;
  width = img.width;
  return buffer;
}

void write_png(const std::string& path, bool gray, unsigned height, unsigned width,
               const std::uint8_t* rows) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.height = height;
  img.width = width;
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&img, path.c_str(), 0, rows, 0, nullptr))
    throw std::runtime_error("PNG write failed for " + path + ": " + img.message);
}

Tensor3 read_ppm(const std::vector<std::uint8_t>& bytes, const std::string& path) {
  // P6 header: magic, whitespace/comments, width, height, maxval, single
  // whitespace, then raw RGB triples.
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(bytes[pos])) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_space();
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      ++pos;
      any = true;
    }
    if (!any) throw FormatError("PPM header malformed in " + path);
    return v;
  };
  const long width = read_int();
  const long height = read_int();
  const long maxval = read_int();
  if (maxval != 255)
    throw FormatError("PPM " + path + " has maxval " + std::to_string(maxval) +
                      "; only 8-bit (255) is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw FormatError("PPM header malformed in " + path);
  ++pos;
  const std::size_t need = static_cast<std::size_t>(width) * height * 3;
  if (bytes.size() - pos < need)
    throw FormatError("PPM " + path + " truncated: expected " + std::to_string(need) +
                      " pixel bytes");
  Tensor3 img(static_cast<int>(height), static_cast<int>(width), 3);
  for (std::size_t i = 0; i < need; ++i)
    img.data[i] = static_cast<float>(bytes[pos + i]) / 255.0f;
  return img;
}

}  // namespace

void save_model(const Model& m, const std::string& path) {
  std::vector<std::uint8_t> out;
  out.reserve(m.parameter_count(true) * 4 + 64);
  append_bytes(out, "FLSH", 4);
  append_u32(out, kCheckpointVersion);
  append_u32(out, 5);
  append_conv(out, m.conv1);
  append_conv(out, m.conv2);
  append_conv(out, m.conv3);
  append_dense(out, m.fc);
  append_dense(out, m.out);
  append_u32(out, crc32_of(out.data(), out.size()));
  write_file_bytes(path, out);
}

Model load_model(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 16) throw FormatError("checkpoint " + path + " is too short");
  if (std::memcmp(bytes.data(), "FLSH", 4) != 0)
    throw FormatError("checkpoint " + path + " has wrong magic");

  // Validate the trailing CRC over everything before it.
  const std::size_t payload = bytes.size() - 4;
  ByteReader tail(bytes.data() + payload, 4);
  const std::uint32_t stored = tail.read_u32("crc");
  if (crc32_of(bytes.data(), payload) != stored)
    throw ChecksumError("checkpoint " + path + " failed CRC32 validation");

  ByteReader r(bytes.data(), payload);
  std::uint8_t magic[4];
  r.read(magic, 4, "magic");
  const std::uint32_t version = r.read_u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint " + path + " has unsupported version " +
                      std::to_string(version));
  const std::uint32_t layers = r.read_u32("layer count");
  if (layers != 5)
    throw FormatError("checkpoint " + path + " has " + std::to_string(layers) +
                      " layers; expected 5");

  Model m = build_network<float>(NetConfig{}, 0);
  read_conv(r, m.conv1, "conv1");
  read_conv(r, m.conv2, "conv2");
  read_conv(r, m.conv3, "conv3");
  read_dense(r, m.fc, "fc");
  read_dense(r, m.out, "out");
  if (r.remaining() != 0)
    throw FormatError("checkpoint " + path + " has trailing bytes");
  m.set_mode(RunMode::kEval);
  return m;
}

Tensor3 read_image(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return read_ppm(bytes, path);
  static const std::uint8_t png_sig[4] = {0x89, 'P', 'N', 'G'};
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), png_sig, 4) == 0) {
    unsigned h = 0, w = 0;
    const std::vector<std::uint8_t> rgb = read_png(path, /*gray=*/false, h, w);
    Tensor3 img(static_cast<int>(h), static_cast<int>(w), 3);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      img.data[i] = static_cast<float>(rgb[i]) / 255.0f;
    return img;
  }
  throw FormatError("image " + path + " is neither PNG nor binary PPM (P6)");
}

void write_image(const Tensor3& image, const std::string& path) {
  if (image.channels != 3)
    throw std::invalid_argument("write_image: image must have 3 channels");
  std::vector<std::uint8_t> rgb(image.data.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = to_byte(image.data[i]);
  if (has_suffix(path, ".ppm")) {
    std::vector<std::uint8_t> out;
    const std::string header =
        "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    append_bytes(out, header.data(), header.size());
    append_bytes(out, rgb.data(), rgb.size());
    write_file_bytes(path, out);
    return;
  }
  write_png(path, /*gray=*/false, static_cast<unsigned>(image.height),
            static_cast<unsigned>(image.width), rgb.data());
}

Mask read_mask(const std::string& path) {
  unsigned h = 0, w = 0;
  const std::vector<std::uint8_t> gray = read_png(path, /*gray=*/true, h, w);
  Mask mask(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < gray.size(); ++i) mask.data[i] = gray[i] >= 128 ? 1 : 0;
  return mask;
}

void write_mask(const Mask& mask, const std::string& path) {
  std::vector<std::uint8_t> gray(mask.data.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = mask.data[i] ? 255 : 0;
  write_png(path, /*gray=*/true, static_cast<unsigned>(mask.height),
            static_cast<unsigned>(mask.width), gray.data());
}

Tensor3 read_prob_map(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 16) throw FormatError("prob map " + path + " is too short");
  if (std::memcmp(bytes.data(), "FPRB", 4) != 0)
    throw FormatError("prob map " + path + " has wrong magic");
  ByteReader r(bytes.data(), bytes.size());
  std::uint8_t magic[4];
  r.read(magic, 4, "magic");
  const std::uint32_t height = r.read_u32("height");
  const std::uint32_t width = r.read_u32("width");
  r.read_u32("reserved");
  if (height == 0 || width == 0)
    throw FormatError("prob map " + path + " has zero dimensions");
  const std::size_t need = static_cast<std::size_t>(height) * width * 4;
  if (r.remaining() != need)
    throw FormatError("prob map " + path + " has " + std::to_string(r.remaining()) +
                      " payload bytes; expected " + std::to_string(need));
  Tensor3 map(static_cast<int>(height), static_cast<int>(width), 1);
  r.read_f32_array(map.data, "values");
  return map;
}

void write_prob_map(const Tensor3& prob_map, const std::string& path) {
  if (prob_map.channels != 1)
    throw std::invalid_argument("write_prob_map: map must be single-channel");
  std::vector<std::uint8_t> out;
  out.reserve(16 + prob_map.data.size() * 4);
  append_bytes(out, "FPRB", 4);
  append_u32(out, static_cast<std::uint32_t>(prob_map.height));
  append_u32(out, static_cast<std::uint32_t>(prob_map.width));
  append_u32(out, 0);
  for (const float v : prob_map.data) append_f32(out, v);
  write_file_bytes(path, out);
}

}  // namespace flashdet
