#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "pfda/autodiff.hpp"
#include "pfda/rng.hpp"

namespace pfda {

// Scale parameterization of the backbone. The paper-scale instance is
// paper_instance(); desk-scale instances satisfy the same shape laws.
struct ModelConfig {
  std::size_t input_side = 48;     // S
  std::size_t base_channels = 8;   // c; encoder stages use c, 2c, 4c
  std::size_t embed_dim = 64;      // d
  std::size_t num_heads = 4;       // h
  std::size_t num_blocks = 2;      // L
  std::size_t mlp_hidden = 128;
  std::size_t patch_side = 2;      // p
  std::size_t num_classes = 2;     // K

  void validate() const;
  bool operator==(const ModelConfig&) const = default;

  static ModelConfig paper_instance();  // S=192, c=32, d=512, h=8, L=6, p=8
  static ModelConfig tiny();            // gradient-check scale (S=16)
};

// Shape schedule implied by a ModelConfig; pure arithmetic, no allocation.
struct StageShapes {
  Shape f1, f2, f3;            // (C, D', H', W') per encoder stage
  std::size_t token_count;     // N = (S/(8p))^3
  std::size_t token_grid;      // S/(8p)
  std::size_t head_dim;        // d/h
  Shape vit_volume;            // (d, S/8, S/8, S/8)
  std::vector<std::size_t> decoder_channels;  // d/4, d/8, d/16
  Shape output;                // (K, S, S, S)
};

StageShapes stage_shapes(const ModelConfig& cfg);

// Ordered, name-addressable collection of trainable arrays and persistent
// buffers (BN running statistics). Iteration order is registration order and
// is what the optimizer and checkpoints rely on.
class Parameters {
 public:
  struct Entry {
    std::string name;
    ag::Var var;
    bool trainable;
  };

  ag::Var add(const std::string& name, Tensor init, bool trainable = true);
  ag::Var get(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t total_scalars(bool trainable_only = true) const;
  void zero_grads();

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Segmentation backbone: 3D CNN encoder, ViT encoder over patch tokens,
// skip-connected trilinear-upsampling decoder.
class SegModel {
 public:
  SegModel(const ModelConfig& cfg, Parameters& params, std::uint64_t init_seed);

  struct EncoderFeatures {
    ag::Var f1, f2, f3;
  };

  // Forward-pass settings: train toggles BN batch statistics; update_bn
  // gates the running-statistics side effect (off during gradient checks).
  struct Mode {
    bool train = false;
    bool update_bn = false;
  };

  EncoderFeatures cnn_encode(const ag::Var& x, const Mode& mode);
  ag::Var patch_embed(const ag::Var& f3);
  ag::Var transformer_encode(const ag::Var& tokens);
  ag::Var tokens_to_volume(const ag::Var& tokens) const;
  ag::Var decode(const ag::Var& vit_out, const ag::Var& f1, const ag::Var& f2,
                 const Mode& mode);

  struct ForwardResult {
    ag::Var prob_map;  // (B, K, S, S, S), per-voxel simplex
    ag::Var vit_out;   // (B, d, S/8, S/8, S/8)
  };
  ForwardResult forward(const Tensor& x, const Mode& mode);
  ForwardResult forward(const ag::Var& x, const Mode& mode);

  const ModelConfig& config() const { return cfg_; }
  const StageShapes& shapes() const { return shapes_; }

  struct ConvBn {
    ag::Var w, b, bn_scale, bn_shift;
    ag::BnBuffers bn;
  };

 private:
  ag::Var apply_conv_bn_relu(ConvBn& layer, const ag::Var& x, const Mode& mode,
                             int stride, int pad);

  ModelConfig cfg_;
  StageShapes shapes_;

  std::vector<ConvBn> enc_;        // 6 conv+BN+ReLU layers, 2 per block
  ag::Var patch_w_, patch_b_, pos_embed_;
  struct VitBlock {
    ag::Var ln1_scale, ln1_shift;
    ag::Var wq, bq, wk, bk, wv, bv, wo, bo;
    ag::Var ln2_scale, ln2_shift;
    ag::Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  };
  std::vector<VitBlock> vit_;
  std::vector<ConvBn> dec_;        // 6 conv+BN+ReLU layers, 2 per stage
  ag::Var final_w_, final_b_;
};

// Fan-in-scaled uniform initialization bound.
Tensor init_uniform(Rng& rng, const Shape& shape, std::size_t fan_in);

}  // namespace pfda
