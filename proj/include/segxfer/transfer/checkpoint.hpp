#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "segxfer/error.hpp"
#include "segxfer/tensor/param_tree.hpp"

namespace segxfer::transfer {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'S', 'X', 'L', '1'};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  bool buffer = false;
  std::vector<float> values;

  bool operator==(const CheckpointEntry&) const = default;
};

/// In-memory image of a checkpoint file. Entries are kept sorted by name.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string task;                  // pretext that produced it, may be empty
  std::vector<std::string> config;   // free-form `key = value` echo lines
  std::vector<std::string> trained;  // prefixes the optimizer updated
  std::vector<CheckpointEntry> tensors;

  const CheckpointEntry* find(std::string_view name) const {
    auto it = std::lower_bound(tensors.begin(), tensors.end(), name,
                               [](const CheckpointEntry& e, std::string_view n) { return e.name < n; });
    if (it == tensors.end() || it->name != name) return nullptr;
    return &*it;
  }

  bool has_subtree(std::string_view prefix) const {
    return std::any_of(tensors.begin(), tensors.end(),
                       [&](const CheckpointEntry& e) { return has_prefix(e.name, prefix); });
  }

  bool operator==(const Checkpoint&) const = default;
};

template <typename T>
Checkpoint make_checkpoint(const ParamTree<T>& tree, std::string task = {},
                           std::vector<std::string> config = {},
                           std::vector<std::string> trained = {}) {
  Checkpoint ck;
  ck.task = std::move(task);
  ck.config = std::move(config);
  ck.trained = std::move(trained);
  auto add = [&](const std::map<std::string, Tensor<T>>& table, bool buffer) {
    for (const auto& [name, t] : table) {
      CheckpointEntry e{name, t.shape(), buffer, {}};
      e.values.reserve(t.numel());
      for (T v : t.data()) e.values.push_back(static_cast<float>(v));
      ck.tensors.push_back(std::move(e));
    }
  };
  add(tree.params, false);
  add(tree.buffers, true);
  std::sort(ck.tensors.begin(), ck.tensors.end(),
            [](const CheckpointEntry& a, const CheckpointEntry& b) { return a.name < b.name; });
  return ck;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}

inline std::uint32_t crc32_of(const std::string& bytes, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(n));
  return static_cast<std::uint32_t>(crc);
}

inline bool valid_token(const std::string& s) {
  return !s.empty() && std::none_of(s.begin(), s.end(), [](char c) {
    return c == ' ' || c == '\n' || c == '\t' || c == '\r';
  });
}

inline void check_line(const std::string& s) {
  if (s.find('\n') != std::string::npos || s.find('\r') != std::string::npos) {
    fail("transfer", "bad_header", "header text may not contain line breaks");
  }
}

}  // namespace detail

/// File layout: magic "SXL1", u32 header length, UTF-8 header text, raw
/// little-endian f32 payload, u32 CRC-32 of everything before it.
inline std::string serialize(const Checkpoint& ck) {
  std::ostringstream h;
  h << "version " << ck.version << '\n';
  detail::check_line(ck.task);
  h << "task " << ck.task << '\n';
  for (const auto& line : ck.config) {
    detail::check_line(line);
    h << "config " << line << '\n';
  }
  for (const auto& p : ck.trained) {
    if (!detail::valid_token(p)) fail("transfer", "bad_header", "bad trained prefix '" + p + "'");
    h << "trained " << p << '\n';
  }
  h << "tensors " << ck.tensors.size() << '\n';
  std::size_t offset = 0;
  for (const auto& e : ck.tensors) {
    if (!detail::valid_token(e.name)) fail("transfer", "bad_header", "bad tensor name '" + e.name + "'");
    if (shape_numel(e.shape) != e.values.size()) {
      fail("transfer", "bad_header", e.name + ": value count does not match shape");
    }
    h << (e.buffer ? "buffer " : "param ") << e.name << ' ' << offset << ' ' << e.shape.size();
    for (auto d : e.shape) h << ' ' << d;
    h << '\n';
    offset += e.values.size() * 4;
  }
  const std::string header = h.str();

  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  out.reserve(out.size() + offset + 4);
  for (const auto& e : ck.tensors) {
    for (float v : e.values) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_u32(out, bits);
    }
  }
  detail::put_u32(out, detail::crc32_of(out, out.size()));
  return out;
}

inline Checkpoint deserialize(const std::string& bytes, const std::string& where = "checkpoint") {
  if (bytes.size() < 12 || bytes.compare(0, 4, kCheckpointMagic, 4) != 0) {
    fail("transfer", "bad_magic", where + ": not an SXL1 checkpoint");
  }
  const std::size_t body = bytes.size() - 4;
  if (detail::crc32_of(bytes, body) != detail::get_u32(bytes, body)) {
    fail("transfer", "checksum", where + ": CRC-32 mismatch, file is corrupt");
  }
  const std::size_t header_len = detail::get_u32(bytes, 4);
  if (8 + header_len > body) fail("transfer", "truncated", where + ": header overruns file");

  Checkpoint ck;
  std::istringstream h(bytes.substr(8, header_len));
  std::string line;
  std::size_t expected = 0;
  bool saw_count = false;
  std::size_t payload_bytes = 0;
  std::vector<std::size_t> offsets;
  auto bad = [&](const std::string& why) { fail("transfer", "bad_header", where + ": " + why); };
  while (std::getline(h, line)) {
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? std::string() : line.substr(sp + 1);
    if (key == "version") {
      ck.version = static_cast<std::uint32_t>(std::stoul(rest));
      if (ck.version != kCheckpointVersion) {
        fail("transfer", "version", where + ": unsupported version " + rest);
      }
    } else if (key == "task") {
      ck.task = rest;
    } else if (key == "config") {
      ck.config.push_back(rest);
    } else if (key == "trained") {
      ck.trained.push_back(rest);
    } else if (key == "tensors") {
      expected = std::stoul(rest);
      saw_count = true;
    } else if (key == "param" || key == "buffer") {
      std::istringstream ls(rest);
      CheckpointEntry e;
      e.buffer = key == "buffer";
      std::size_t off = 0, rank = 0;
      if (!(ls >> e.name >> off >> rank)) bad("malformed tensor record");
      e.shape.resize(rank);
      for (auto& d : e.shape) {
        if (!(ls >> d) || d == 0) bad("malformed shape for " + e.name);
      }
      e.values.resize(shape_numel(e.shape));
      offsets.push_back(off);
      payload_bytes += e.values.size() * 4;
      ck.tensors.push_back(std::move(e));
    } else {
      bad("unknown header key '" + key + "'");
    }
  }
  if (!saw_count || expected != ck.tensors.size()) bad("tensor count disagrees with directory");
  const std::size_t payload = 8 + header_len;
  if (payload + payload_bytes != body) fail("transfer", "truncated", where + ": payload length mismatch");
  for (std::size_t i = 0; i < ck.tensors.size(); ++i) {
    auto& e = ck.tensors[i];
    if (i > 0 && !(ck.tensors[i - 1].name < e.name)) bad("tensor directory is not sorted");
    if (offsets[i] + e.values.size() * 4 > payload_bytes) bad(e.name + ": offset out of range");
    for (std::size_t k = 0; k < e.values.size(); ++k) {
      const std::uint32_t bits = detail::get_u32(bytes, payload + offsets[i] + 4 * k);
      std::memcpy(&e.values[k], &bits, 4);
    }
  }
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const std::string bytes = serialize(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("transfer", "io", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail("transfer", "io", "short write to " + path.string());
}

template <typename T>
void save_checkpoint(const ParamTree<T>& tree, const fs::path& path, std::string task = {},
                     std::vector<std::string> config = {}, std::vector<std::string> trained = {}) {
  save_checkpoint(make_checkpoint(tree, std::move(task), std::move(config), std::move(trained)),
                  path);
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("transfer", "io", "cannot open " + path.string());
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize(bytes, path.string());
}

/// Copies every model tensor under one of `prefixes` from the checkpoint.
/// All problems are collected first so the error lists every offending name.
template <typename T>
std::vector<std::string> load_subtrees(ParamTree<T>& tree, const Checkpoint& ck,
                                       const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes) {
    if (!ck.has_subtree(p)) {
      fail("transfer", "missing_subtree", "checkpoint has no tensors under '" + p + "'");
    }
  }
  std::vector<std::string> loaded, problems;
  auto visit = [&](std::map<std::string, Tensor<T>>& table) {
    for (auto& [name, t] : table) {
      const bool wanted = std::any_of(prefixes.begin(), prefixes.end(),
                                      [&](const std::string& p) { return has_prefix(name, p); });
      if (!wanted) continue;
      const CheckpointEntry* e = ck.find(name);
      if (e == nullptr) {
        problems.push_back(name + " (absent from checkpoint)");
      } else if (e->shape != t.shape()) {
        problems.push_back(name + " (model " + shape_str(t.shape()) + ", checkpoint " +
                           shape_str(e->shape) + ")");
      } else {
        loaded.push_back(name);
      }
    }
  };
  visit(tree.params);
  visit(tree.buffers);
  if (!problems.empty()) {
    std::string msg = std::to_string(problems.size()) + " tensor(s) do not match:";
    for (const auto& p : problems) msg += " " + p + ";";
    msg.pop_back();
    fail("transfer", "shape_mismatch", msg);
  }
  for (const auto& name : loaded) {
    const CheckpointEntry* e = ck.find(name);
    auto& t = tree.params.count(name) ? tree.params.at(name) : tree.buffers.at(name);
    auto d = t.data();
    std::transform(e->values.begin(), e->values.end(), d.begin(),
                   [](float v) { return static_cast<T>(v); });
    t.clear_grad();
  }
  std::sort(loaded.begin(), loaded.end());
  return loaded;
}

/// Loads the whole model from the checkpoint.
template <typename T>
void load_all(ParamTree<T>& tree, const Checkpoint& ck) {
  load_subtrees(tree, ck, {""});
}

}  // namespace segxfer::transfer
