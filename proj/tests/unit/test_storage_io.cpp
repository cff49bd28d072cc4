#include <doctest.h>

#include <zlib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "flashdet/network.hpp"
#include "flashdet/rng.hpp"
#include "flashdet/storage_io.hpp"

using namespace flashdet;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("flashdet_test_" + std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

bool models_equal(const Model& a, const Model& b) {
  std::vector<const std::vector<float>*> wa, wb;
  a.for_each_param_array([&](const std::vector<float>& v) { wa.push_back(&v); });
  b.for_each_param_array([&](const std::vector<float>& v) { wb.push_back(&v); });
  for (std::size_t i = 0; i < wa.size(); ++i)
    if (*wa[i] != *wb[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("checkpoint round-trip is bit-exact") {
  TempDir dir;
  const Model m = build_model(12345);
  const std::string path = dir.file("model.flsh");
  save_model(m, path);
  const Model loaded = load_model(path);
  CHECK(models_equal(m, loaded));
  CHECK_EQ(loaded.parameter_count(false), 286128);
}

TEST_CASE("checkpoint corruption and format errors") {
  TempDir dir;
  const Model m = build_model(5);
  const std::string path = dir.file("model.flsh");
  save_model(m, path);
  std::vector<std::uint8_t> bytes = slurp(path);

  SUBCASE("flipping one payload byte fails the checksum") {
    bytes[bytes.size() / 2] ^= 0x40;
    dump(path, bytes);
    CHECK_THROWS_AS(load_model(path), ChecksumError);
  }

  SUBCASE("empty and truncated files are format errors") {
    dump(path, {});
    CHECK_THROWS_AS(load_model(path), FormatError);
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 40);
    dump(path, cut);
    CHECK_THROWS_AS(load_model(path), FormatError);
  }

  SUBCASE("wrong magic is a format error") {
    bytes[0] = 'X';
    dump(path, bytes);
    CHECK_THROWS_AS(load_model(path), FormatError);
  }

  SUBCASE("unsupported version is a format error") {
    bytes[4] = 9;  // bump version, then restore a valid CRC
    const std::size_t payload = bytes.size() - 4;
    const std::uint32_t crc = static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(payload)));
    for (int i = 0; i < 4; ++i)
      bytes[payload + static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>(crc >> (8 * i));
    dump(path, bytes);
    CHECK_THROWS_AS(load_model(path), FormatError);
  }
}

TEST_CASE("image round-trips within 8-bit quantization") {
  TempDir dir;
  Rng rng(9);
  Tensor3 img(21, 17, 3);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());

  for (const char* name : {"img.png", "img.ppm"}) {
    const std::string path = dir.file(name);
    write_image(img, path);
    const Tensor3 back = read_image(path);
    REQUIRE_EQ(back.height, img.height);
    REQUIRE_EQ(back.width, img.width);
    REQUIRE_EQ(back.channels, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i)
      CHECK_LE(std::abs(back.data[i] - img.data[i]), 1.0f / 255.0f + 1e-6f);
  }
}

TEST_CASE("mask round-trip is exact and thresholds at 128") {
  TempDir dir;
  Rng rng(10);
  Mask mask(33, 15);
  for (auto& v : mask.data) v = rng.uniform() < 0.5 ? 1 : 0;
  const std::string path = dir.file("mask.png");
  write_mask(mask, path);
  const Mask back = read_mask(path);
  CHECK(back.data == mask.data);
}

TEST_CASE("probability map round-trip is bit-exact") {
  TempDir dir;
  Rng rng(11);
  Tensor3 prob(19, 23, 1);
  for (auto& v : prob.data) v = static_cast<float>(rng.uniform());
  const std::string path = dir.file("map.fprb");
  write_prob_map(prob, path);
  const Tensor3 back = read_prob_map(path);
  CHECK_EQ(back.height, 19);
  CHECK_EQ(back.width, 23);
  CHECK(back.data == prob.data);

  SUBCASE("header and payload errors are named") {
    const std::vector<std::uint8_t> original = slurp(path);
    std::vector<std::uint8_t> bytes = original;
    bytes[0] = 'Z';
    dump(path, bytes);
    CHECK_THROWS_AS(read_prob_map(path), FormatError);
    bytes = original;
    bytes.pop_back();
    dump(path, bytes);
    CHECK_THROWS_WITH_AS(read_prob_map(path),
                         doctest::Contains("payload bytes"), FormatError);
  }
}

TEST_CASE("unsupported image inputs are format errors with detail") {
  TempDir dir;
  const std::string garbage = dir.file("notes.txt");
  {
    std::ofstream f(garbage);
    f << "not an image";
  }
  CHECK_THROWS_WITH_AS(read_image(garbage), doctest::Contains("neither PNG nor binary PPM"),
                       FormatError);

  const std::string deep = dir.file("deep.ppm");
  {
    std::ofstream f(deep, std::ios::binary);
    f << "P6\n2 2\n65535\n";
    for (int i = 0; i < 24; ++i) f.put('\0');
  }
  CHECK_THROWS_WITH_AS(read_image(deep), doctest::Contains("maxval"), FormatError);
}
