#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "segxfer/rng.hpp"
#include "segxfer/tensor/ops.hpp"
#include "segxfer/tensor/param_tree.hpp"

namespace segxfer::unet {

struct UNetConfig {
  std::size_t in_channels = 3;
  std::size_t depth = 3;
  std::size_t base_channels = 16;
  std::size_t num_classes = 2;
  std::size_t embed_dim = 64;
  std::size_t input_size = 64;

  std::size_t channels_at(std::size_t level) const { return base_channels << level; }
  std::size_t bottleneck_channels() const { return channels_at(depth - 1); }
  std::size_t bottleneck_size() const { return input_size >> depth; }

  void validate() const {
    if (depth < 2) fail("unet", "config", "depth must be >= 2, got " + std::to_string(depth));
    if (base_channels < 4) {
      fail("unet", "config", "base_channels must be >= 4, got " + std::to_string(base_channels));
    }
    if (in_channels == 0 || num_classes == 0 || embed_dim == 0) {
      fail("unet", "config", "in_channels, num_classes and embed_dim must be positive");
    }
    const std::size_t div = std::size_t{1} << depth;
    if (input_size == 0 || input_size % div != 0) {
      fail("unet", "config", "input_size " + std::to_string(input_size) +
                                 " is not divisible by 2^depth = " + std::to_string(div));
    }
  }

  bool operator==(const UNetConfig&) const = default;
};

/// One named tensor of the model layout.
struct TensorSpec {
  std::string name;
  Shape shape;
  bool buffer = false;
};

/// Reconstruction heads in target order b, c, d, e.
inline constexpr std::array<const char*, 4> kReconHeads = {"b", "c", "d", "e"};

namespace detail {

inline void add_conv(std::vector<TensorSpec>& out, const std::string& prefix, std::size_t cin,
                     std::size_t cout, std::size_t k) {
  out.push_back({prefix + "/weight", {cout, cin, k, k}});
  out.push_back({prefix + "/bias", {cout}});
}

inline void add_bn(std::vector<TensorSpec>& out, const std::string& prefix, std::size_t c) {
  out.push_back({prefix + "/gamma", {c}});
  out.push_back({prefix + "/beta", {c}});
  out.push_back({prefix + "/running_mean", {c}, true});
  out.push_back({prefix + "/running_var", {c}, true});
}

inline void add_double_conv(std::vector<TensorSpec>& out, const std::string& prefix,
                            std::size_t cin, std::size_t cout) {
  add_conv(out, prefix + "/conv1", cin, cout, 3);
  add_bn(out, prefix + "/bn1", cout);
  add_conv(out, prefix + "/conv2", cout, cout, 3);
  add_bn(out, prefix + "/bn2", cout);
}

inline std::size_t decoder_in_channels(const UNetConfig& c, std::size_t block) {
  const std::size_t level = c.depth - 1 - block;
  const std::size_t up = block == 0 ? c.channels_at(c.depth - 1) : c.channels_at(level + 1);
  return up + c.channels_at(level);
}

}  // namespace detail

/// Every tensor the model owns, with its shape.
///
/// The final decoder block doubles as the last block of reconstruction head b;
/// heads c, d and e own a private copy of that block under `heads/recon_<x>/block`.
inline std::vector<TensorSpec> layout(const UNetConfig& c) {
  c.validate();
  std::vector<TensorSpec> out;
  for (std::size_t i = 0; i < c.depth; ++i) {
    const std::size_t cin = i == 0 ? c.in_channels : c.channels_at(i - 1);
    detail::add_double_conv(out, "encoder/block" + std::to_string(i), cin, c.channels_at(i));
  }
  for (std::size_t j = 0; j < c.depth; ++j) {
    detail::add_double_conv(out, "decoder/block" + std::to_string(j),
                            detail::decoder_in_channels(c, j), c.channels_at(c.depth - 1 - j));
  }
  const std::size_t bc = c.bottleneck_channels();
  detail::add_conv(out, "heads/seg", c.base_channels, 1, 1);
  out.push_back({"heads/cls/weight", {c.num_classes, bc}});
  out.push_back({"heads/cls/bias", {c.num_classes}});
  out.push_back({"heads/proj/fc1/weight", {bc, bc}});
  out.push_back({"heads/proj/fc1/bias", {bc}});
  out.push_back({"heads/proj/fc2/weight", {c.embed_dim, bc}});
  out.push_back({"heads/proj/fc2/bias", {c.embed_dim}});
  for (const char* h : kReconHeads) {
    const std::string prefix = std::string("heads/recon_") + h;
    if (std::string(h) != "b") {
      detail::add_double_conv(out, prefix + "/block", detail::decoder_in_channels(c, c.depth - 1),
                              c.base_channels);
    }
    const std::size_t out_ch = std::string(h) == "d" ? 1 : c.in_channels;
    detail::add_conv(out, prefix + "/out", c.base_channels, out_ch, 1);
  }
  return out;
}

inline bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Fresh value for one named tensor: He-normal for weights, zero biases,
/// unit gamma, zero beta, running statistics (0, 1). Each name draws from its
/// own stream so re-initialising a subtree never depends on what else exists.
template <typename T>
Tensor<T> init_tensor(const TensorSpec& spec, std::uint64_t seed) {
  Tensor<T> t(spec.shape, !spec.buffer);
  auto d = t.data();
  if (ends_with(spec.name, "/weight")) {
    std::size_t fan_in = 1;
    for (std::size_t i = 1; i < spec.shape.size(); ++i) fan_in *= spec.shape[i];
    Rng rng(derive_seed(seed, spec.name));
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : d) v = static_cast<T>(dist(rng));
  } else if (ends_with(spec.name, "/gamma") || ends_with(spec.name, "/running_var")) {
    std::fill(d.begin(), d.end(), T{1});
  }
  return t;
}

template <typename T>
ParamTree<T> build(const UNetConfig& config, std::uint64_t seed) {
  ParamTree<T> tree;
  for (const auto& spec : layout(config)) {
    auto& table = spec.buffer ? tree.buffers : tree.params;
    table.emplace(spec.name, init_tensor<T>(spec, seed));
  }
  return tree;
}

template <typename T>
struct EncoderOutput {
  Tensor<T> bottleneck;
  std::vector<Tensor<T>> skips;
};

template <typename T>
struct ConRecOutput {
  Tensor<T> embed;
  std::array<Tensor<T>, 4> recon;
};

namespace detail {

template <typename T>
Tensor<T> conv_bn_relu(Tape<T>& tape, ParamTree<T>& p, const std::string& prefix,
                       const std::string& idx, const Tensor<T>& x, Mode mode) {
  const std::string conv = prefix + "/conv" + idx;
  const std::string bn = prefix + "/bn" + idx;
  auto y = conv2d(tape, x, p.param(conv + "/weight"), p.param(conv + "/bias"), 1, 1);
  BatchNormState<T> state{p.buffer(bn + "/running_mean"), p.buffer(bn + "/running_var")};
  y = batchnorm2d(tape, y, p.param(bn + "/gamma"), p.param(bn + "/beta"), state, mode);
  return relu(tape, y);
}

template <typename T>
Tensor<T> double_conv(Tape<T>& tape, ParamTree<T>& p, const std::string& prefix,
                      const Tensor<T>& x, Mode mode) {
  auto y = conv_bn_relu(tape, p, prefix, "1", x, mode);
  return conv_bn_relu(tape, p, prefix, "2", y, mode);
}

template <typename T>
Tensor<T> up_block(Tape<T>& tape, ParamTree<T>& p, const std::string& prefix,
                   const Tensor<T>& x, const Tensor<T>& skip, Mode mode) {
  auto up = upsample_nearest2(tape, x);
  return double_conv(tape, p, prefix, concat_channels(tape, up, skip), mode);
}

template <typename T>
Tensor<T> conv1x1(Tape<T>& tape, ParamTree<T>& p, const std::string& prefix,
                  const Tensor<T>& x) {
  return conv2d(tape, x, p.param(prefix + "/weight"), p.param(prefix + "/bias"), 1, 0);
}

template <typename T>
void check_input(const UNetConfig& c, const Tensor<T>& x) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != c.in_channels || s[2] != c.input_size || s[3] != c.input_size) {
    fail("unet", "input_shape", "expected (N," + std::to_string(c.in_channels) + "," +
                                    std::to_string(c.input_size) + "," +
                                    std::to_string(c.input_size) + "), got " + shape_str(s));
  }
}

/// Runs decoder blocks [0, count) starting from the bottleneck.
template <typename T>
Tensor<T> decoder_trunk(const UNetConfig& c, ParamTree<T>& p, Tape<T>& tape,
                        const EncoderOutput<T>& enc, std::size_t count, Mode mode) {
  Tensor<T> y = enc.bottleneck;
  for (std::size_t j = 0; j < count; ++j) {
    y = up_block(tape, p, "decoder/block" + std::to_string(j), y, enc.skips[c.depth - 1 - j],
                 mode);
  }
  return y;
}

}  // namespace detail

template <typename T>
EncoderOutput<T> forward_encoder(const UNetConfig& c, ParamTree<T>& p, Tape<T>& tape,
                                 const Tensor<T>& x, Mode mode) {
  detail::check_input(c, x);
  EncoderOutput<T> out;
  Tensor<T> y = x;
  for (std::size_t i = 0; i < c.depth; ++i) {
    y = detail::double_conv(tape, p, "encoder/block" + std::to_string(i), y, mode);
    out.skips.push_back(y);
    y = maxpool2(tape, y);
  }
  out.bottleneck = y;
  return out;
}

/// Full decoder output (N, base_channels, H, W) before any head.
template <typename T>
Tensor<T> forward_decoder(const UNetConfig& c, ParamTree<T>& p, Tape<T>& tape,
                          const EncoderOutput<T>& enc, Mode mode) {
  return detail::decoder_trunk(c, p, tape, enc, c.depth, mode);
}

/// Foreground probability map (N, 1, H, W).
template <typename T>
Tensor<T> forward_segmentation(const UNetConfig& c, ParamTree<T>& p, Tape<T>& tape,
                               const Tensor<T>& x, Mode mode) {
  auto enc = forward_encoder(c, p, tape, x, mode);
  auto dec = forward_decoder(c, p, tape, enc, mode);
  return sigmoid(tape, detail::conv1x1(tape, p, "heads/seg", dec));
}

template <typename T>
Tensor<T> forward_classification(const UNetConfig& c, ParamTree<T>& p, Tape<T>& tape,
                                 const Tensor<T>& x, Mode mode) {
  auto enc = forward_encoder(c, p, tape, x, mode);
  auto pooled = global_avg_pool(tape, enc.bottleneck);
  return dense(tape, pooled, p.param("heads/cls/weight"), p.param("heads/cls/bias"));
}

/// Projection head on a bottleneck: GAP -> dense -> relu -> dense -> L2 norm.
template <typename T>
Tensor<T> project(ParamTree<T>& p, Tape<T>& tape, const Tensor<T>& bottleneck) {
  auto h = global_avg_pool(tape, bottleneck);
  h = relu(tape, dense(tape, h, p.param("heads/proj/fc1/weight"), p.param("heads/proj/fc1/bias")));
  h = dense(tape, h, p.param("heads/proj/fc2/weight"), p.param("heads/proj/fc2/bias"));
  return l2_normalize_rows(tape, h);
}

template <typename T>
Tensor<T> forward_embedding(const UNetConfig& c, ParamTree<T>& p, Tape<T>& tape,
                            const Tensor<T>& x, Mode mode) {
  auto enc = forward_encoder(c, p, tape, x, mode);
  return project(p, tape, enc.bottleneck);
}

/// Single-target reconstruction through the full decoder and head b.
template <typename T>
Tensor<T> forward_reconstruction(const UNetConfig& c, ParamTree<T>& p, Tape<T>& tape,
                                 const Tensor<T>& x, Mode mode) {
  auto enc = forward_encoder(c, p, tape, x, mode);
  auto dec = forward_decoder(c, p, tape, enc, mode);
  return sigmoid(tape, detail::conv1x1(tape, p, "heads/recon_b/out", dec));
}

/// Contrastive embedding plus the four reconstruction outputs (b, c, d, e).
/// Decoder blocks 0..depth-2 are shared; each head owns its final block.
template <typename T>
ConRecOutput<T> forward_conrec(const UNetConfig& c, ParamTree<T>& p, Tape<T>& tape,
                               const Tensor<T>& x, Mode mode) {
  auto enc = forward_encoder(c, p, tape, x, mode);
  ConRecOutput<T> out;
  out.embed = project(p, tape, enc.bottleneck);
  auto trunk = detail::decoder_trunk(c, p, tape, enc, c.depth - 1, mode);
  const auto& skip = enc.skips[0];
  for (std::size_t h = 0; h < kReconHeads.size(); ++h) {
    const std::string head = std::string("heads/recon_") + kReconHeads[h];
    const std::string block =
        h == 0 ? "decoder/block" + std::to_string(c.depth - 1) : head + "/block";
    auto y = detail::up_block(tape, p, block, trunk, skip, mode);
    out.recon[h] = sigmoid(tape, detail::conv1x1(tape, p, head + "/out", y));
  }
  return out;
}

}  // namespace segxfer::unet
