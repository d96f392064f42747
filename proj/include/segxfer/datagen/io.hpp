#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "segxfer/datagen/dataset.hpp"

namespace segxfer::datagen {

namespace fs = std::filesystem;

namespace detail {

inline unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("datagen", "io", "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("datagen", "io", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("datagen", "io", "short write to " + path.string());
}

/// Parses the "P5"/"P6" header; returns the offset of the first pixel byte.
inline std::size_t parse_netpbm_header(const std::string& bytes, const std::string& magic,
                                       const fs::path& path, std::size_t& width,
                                       std::size_t& height) {
  if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) {
    fail("datagen", "bad_magic", path.string() + ": expected " + magic + " header");
  }
  std::size_t pos = 2;
  std::size_t fields[3] = {0, 0, 0};
  for (auto& f : fields) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) fail("datagen", "bad_header", path.string() + ": malformed header");
    f = std::stoul(bytes.substr(start, pos - start));
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    fail("datagen", "bad_header", path.string() + ": malformed header");
  }
  ++pos;
  width = fields[0];
  height = fields[1];
  if (fields[2] != 255) fail("datagen", "bad_header", path.string() + ": maxval must be 255");
  if (width == 0 || height == 0) fail("datagen", "bad_header", path.string() + ": zero size");
  return pos;
}

}  // namespace detail

/// Binary 8-bit PPM (3 channels) or PGM (1 channel), chosen by channel count.
inline void write_netpbm(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    fail("datagen", "channels", "netpbm supports 1 or 3 channels, got " + std::to_string(img.channels));
  }
  std::ostringstream os;
  os << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  std::string bytes = os.str();
  const std::size_t P = img.plane();
  bytes.reserve(bytes.size() + P * img.channels);
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t c = 0; c < img.channels; ++c) {
      bytes.push_back(static_cast<char>(detail::to_byte(img.data[c * P + i])));
    }
  }
  detail::write_file(path, bytes);
}

inline Image read_netpbm(const fs::path& path, std::size_t channels) {
  const std::string bytes = detail::read_file(path);
  std::size_t w = 0, h = 0;
  const std::size_t off =
      detail::parse_netpbm_header(bytes, channels == 3 ? "P6" : "P5", path, w, h);
  if (bytes.size() - off != w * h * channels) {
    fail("datagen", "truncated", path.string() + ": pixel payload has wrong length");
  }
  Image img(channels, h, w);
  const std::size_t P = w * h;
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      img.data[c * P + i] =
          static_cast<float>(static_cast<unsigned char>(bytes[off + i * channels + c])) / 255.0f;
    }
  }
  return img;
}

inline std::string sample_stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05zu", i);
  return buf;
}

/// Writes images/NNNNN.ppm, masks/NNNNN.pgm and manifest.txt, one line per
/// sample: `<image> <mask|-> <label> <split>`.
inline void save_dataset(const std::vector<Sample>& samples, const fs::path& dir) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::ostringstream manifest;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string stem = sample_stem(i);
    write_netpbm(dir / "images" / (stem + ".ppm"), s.image);
    std::string mask_name = "-";
    if (!s.mask.empty()) {
      mask_name = stem + ".pgm";
      write_netpbm(dir / "masks" / mask_name, s.mask);
    }
    manifest << stem << ".ppm " << mask_name << ' ' << s.label << ' ' << split_name(s.split)
             << '\n';
  }
  detail::write_file(dir / "manifest.txt", manifest.str());
}

inline Split parse_split(const std::string& s, const fs::path& where) {
  if (s == "train") return Split::train;
  if (s == "eval") return Split::eval;
  if (s == "none") return Split::none;
  fail("datagen", "bad_manifest", where.string() + ": unknown split '" + s + "'");
}

inline std::vector<Sample> load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.txt";
  std::istringstream manifest(detail::read_file(manifest_path));
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string image_name, mask_name, split;
    int label = 0;
    if (!(ls >> image_name >> mask_name >> label >> split)) {
      fail("datagen", "bad_manifest",
           manifest_path.string() + ":" + std::to_string(lineno) + ": malformed record");
    }
    Sample s;
    s.image = read_netpbm(dir / "images" / image_name, 3);
    if (mask_name != "-") s.mask = read_netpbm(dir / "masks" / mask_name, 1);
    s.label = label;
    s.split = parse_split(split, manifest_path);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace segxfer::datagen
