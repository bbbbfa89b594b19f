#include "pfda/model.hpp"

#include <cmath>

namespace pfda {

void ModelConfig::validate() const {
  require(input_side >= 8, ErrorKind::Config, "ModelConfig: input_side < 8");
  require(base_channels >= 1, ErrorKind::Config,
          "ModelConfig: base_channels < 1");
  require(patch_side >= 1, ErrorKind::Config, "ModelConfig: patch_side < 1");
  require(input_side % (8 * patch_side) == 0, ErrorKind::Config,
          "ModelConfig: input_side " + std::to_string(input_side) +
              " must be divisible by 8*patch_side = " +
              std::to_string(8 * patch_side));
  require(num_heads >= 1 && embed_dim % num_heads == 0, ErrorKind::Config,
          "ModelConfig: embed_dim " + std::to_string(embed_dim) +
              " must be divisible by num_heads " + std::to_string(num_heads));
  require(embed_dim % 16 == 0, ErrorKind::Config,
          "ModelConfig: embed_dim must be divisible by 16 (decoder channel "
          "schedule d/4, d/8, d/16)");
  require(num_blocks >= 1, ErrorKind::Config, "ModelConfig: num_blocks < 1");
  require(mlp_hidden >= 1, ErrorKind::Config, "ModelConfig: mlp_hidden < 1");
  require(num_classes == 2, ErrorKind::Config,
          "ModelConfig: only K=2 is supported");
}

ModelConfig ModelConfig::paper_instance() {
  ModelConfig cfg;
  cfg.input_side = 192;
  cfg.base_channels = 32;
  cfg.embed_dim = 512;
  cfg.num_heads = 8;
  cfg.num_blocks = 6;
  cfg.mlp_hidden = 2048;
  cfg.patch_side = 8;
  cfg.num_classes = 2;
  return cfg;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig cfg;
  cfg.input_side = 16;
  cfg.base_channels = 2;
  cfg.embed_dim = 16;
  cfg.num_heads = 2;
  cfg.num_blocks = 1;
  cfg.mlp_hidden = 24;
  cfg.patch_side = 2;
  cfg.num_classes = 2;
  return cfg;
}

StageShapes stage_shapes(const ModelConfig& cfg) {
  cfg.validate();
  StageShapes s;
  const std::size_t S = cfg.input_side, c = cfg.base_channels;
  s.f1 = {c, S / 2, S / 2, S / 2};
  s.f2 = {2 * c, S / 4, S / 4, S / 4};
  s.f3 = {4 * c, S / 8, S / 8, S / 8};
  s.token_grid = S / (8 * cfg.patch_side);
  s.token_count = s.token_grid * s.token_grid * s.token_grid;
  s.head_dim = cfg.embed_dim / cfg.num_heads;
  s.vit_volume = {cfg.embed_dim, S / 8, S / 8, S / 8};
  s.decoder_channels = {cfg.embed_dim / 4, cfg.embed_dim / 8,
                        cfg.embed_dim / 16};
  s.output = {cfg.num_classes, S, S, S};
  return s;
}

// ---- Parameters ----

ag::Var Parameters::add(const std::string& name, Tensor init, bool trainable) {
  require(index_.find(name) == index_.end(), ErrorKind::Config,
          "Parameters: duplicate name " + name);
  ag::Var v = ag::Var::leaf(std::move(init), trainable);
  index_[name] = entries_.size();
  entries_.push_back({name, v, trainable});
  return v;
}

ag::Var Parameters::get(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::Config,
          "Parameters: unknown name " + name);
  return entries_[it->second].var;
}

bool Parameters::has(const std::string& name) const {
  return index_.find(name) != index_.end();
}

std::size_t Parameters::total_scalars(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& e : entries_)
    if (!trainable_only || e.trainable) n += e.var.value().size();
  return n;
}

void Parameters::zero_grads() {
  for (auto& e : entries_) {
    auto& node = *e.var.node();
    if (node.grad.size() == node.value.size()) node.grad.zero();
  }
}

Tensor init_uniform(Rng& rng, const Shape& shape, std::size_t fan_in) {
  Tensor t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = rng.uniform(-bound, bound);
  return t;
}

// ---- SegModel ----

namespace {

struct LayerFactory {
  Parameters& params;
  Rng& rng;

  SegModel::ConvBn conv_bn(const std::string& prefix, std::size_t cin,
                           std::size_t cout, std::size_t ksize) {
    SegModel::ConvBn l;
    const std::size_t fan_in = cin * ksize * ksize * ksize;
    l.w = params.add(prefix + ".w",
                     init_uniform(rng, {cout, cin, ksize, ksize, ksize}, fan_in));
    l.b = params.add(prefix + ".b", Tensor(Shape{cout}));
    l.bn_scale = params.add(prefix + ".bn_scale", Tensor(Shape{cout}, 1.0));
    l.bn_shift = params.add(prefix + ".bn_shift", Tensor(Shape{cout}));
    l.bn.running_mean =
        params.add(prefix + ".bn_running_mean", Tensor(Shape{cout}), false);
    l.bn.running_var =
        params.add(prefix + ".bn_running_var", Tensor(Shape{cout}, 1.0), false);
    return l;
  }

  ag::Var linear_w(const std::string& name, std::size_t in, std::size_t out) {
    return params.add(name, init_uniform(rng, {in, out}, in));
  }
  ag::Var bias(const std::string& name, std::size_t n) {
    return params.add(name, Tensor(Shape{n}));
  }
  ag::Var ln_scale(const std::string& name, std::size_t n) {
    return params.add(name, Tensor(Shape{n}, 1.0));
  }
  ag::Var ln_shift(const std::string& name, std::size_t n) {
    return params.add(name, Tensor(Shape{n}));
  }
};

}  // namespace

SegModel::SegModel(const ModelConfig& cfg, Parameters& params,
                   std::uint64_t init_seed)
    : cfg_(cfg), shapes_(stage_shapes(cfg)) {
  Rng rng(stream_seed(init_seed, "model_init"));
  LayerFactory f{params, rng};
  const std::size_t c = cfg.base_channels, d = cfg.embed_dim;

  // Encoder: three blocks of two conv+BN+ReLU layers, maxpool after each.
  const std::size_t enc_ch[4] = {1, c, 2 * c, 4 * c};
  for (int blk = 0; blk < 3; ++blk) {
    const std::string p = "cnn.b" + std::to_string(blk + 1);
    enc_.push_back(f.conv_bn(p + ".conv1", enc_ch[blk], enc_ch[blk + 1], 3));
    enc_.push_back(f.conv_bn(p + ".conv2", enc_ch[blk + 1], enc_ch[blk + 1], 3));
  }

  // Patch embedding: conv with kernel = stride = p, then positional table.
  const std::size_t p = cfg.patch_side;
  patch_w_ = params.add(
      "vit.patch.w",
      init_uniform(rng, {d, 4 * c, p, p, p}, 4 * c * p * p * p));
  patch_b_ = params.add("vit.patch.b", Tensor(Shape{d}));
  Tensor pos(Shape{1, shapes_.token_count, d});
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = rng.normal(0.0, 0.02);
  pos_embed_ = params.add("vit.pos", std::move(pos));

  for (std::size_t blk = 0; blk < cfg.num_blocks; ++blk) {
    const std::string pb = "vit.blk" + std::to_string(blk);
    VitBlock vb;
    vb.ln1_scale = f.ln_scale(pb + ".ln1_scale", d);
    vb.ln1_shift = f.ln_shift(pb + ".ln1_shift", d);
    vb.wq = f.linear_w(pb + ".attn.wq", d, d);
    vb.bq = f.bias(pb + ".attn.bq", d);
    vb.wk = f.linear_w(pb + ".attn.wk", d, d);
    vb.bk = f.bias(pb + ".attn.bk", d);
    vb.wv = f.linear_w(pb + ".attn.wv", d, d);
    vb.bv = f.bias(pb + ".attn.bv", d);
    vb.wo = f.linear_w(pb + ".attn.wo", d, d);
    vb.bo = f.bias(pb + ".attn.bo", d);
    vb.ln2_scale = f.ln_scale(pb + ".ln2_scale", d);
    vb.ln2_shift = f.ln_shift(pb + ".ln2_shift", d);
    vb.mlp_w1 = f.linear_w(pb + ".mlp.w1", d, cfg.mlp_hidden);
    vb.mlp_b1 = f.bias(pb + ".mlp.b1", cfg.mlp_hidden);
    vb.mlp_w2 = f.linear_w(pb + ".mlp.w2", cfg.mlp_hidden, d);
    vb.mlp_b2 = f.bias(pb + ".mlp.b2", d);
    vit_.push_back(std::move(vb));
  }

  // Decoder: stage k upsamples x2, concatenates the matching skip (f2 then
  // f1, none for the last stage), then two conv+BN+ReLU layers.
  const auto& dc = shapes_.decoder_channels;
  const std::size_t dec_in[3] = {d + 2 * c, dc[0] + c, dc[1]};
  for (int stage = 0; stage < 3; ++stage) {
    const std::string ps = "dec.s" + std::to_string(stage + 1);
    dec_.push_back(f.conv_bn(ps + ".conv1", dec_in[stage], dc[stage], 3));
    dec_.push_back(f.conv_bn(ps + ".conv2", dc[stage], dc[stage], 3));
  }
  final_w_ = params.add("dec.final.w",
                        init_uniform(rng, {cfg.num_classes, dc[2], 1, 1, 1},
                                     dc[2]));
  final_b_ = params.add("dec.final.b", Tensor(Shape{cfg.num_classes}));
}

ag::Var SegModel::apply_conv_bn_relu(ConvBn& layer, const ag::Var& x,
                                     const Mode& mode, int stride, int pad) {
  ag::Var y = ag::conv3d(x, layer.w, layer.b, stride, pad);
  y = ag::batchnorm(y, layer.bn_scale, layer.bn_shift, layer.bn, mode.train,
                    mode.train && mode.update_bn);
  return ag::relu(y);
}

SegModel::EncoderFeatures SegModel::cnn_encode(const ag::Var& x,
                                               const Mode& mode) {
  const Shape& s = x.value().shape();
  require(s.size() == 5 && s[1] == 1 && s[2] == cfg_.input_side &&
              s[3] == cfg_.input_side && s[4] == cfg_.input_side,
          ErrorKind::Shape,
          "cnn_encode: expected (B,1," + std::to_string(cfg_.input_side) +
              "^3), got " + shape_str(s));
  EncoderFeatures out;
  ag::Var h = x;
  for (int blk = 0; blk < 3; ++blk) {
    h = apply_conv_bn_relu(enc_[2 * blk], h, mode, 1, 1);
    h = apply_conv_bn_relu(enc_[2 * blk + 1], h, mode, 1, 1);
    h = ag::maxpool2(h);
    (blk == 0 ? out.f1 : blk == 1 ? out.f2 : out.f3) = h;
  }
  return out;
}

ag::Var SegModel::patch_embed(const ag::Var& f3) {
  const Shape& s = f3.value().shape();
  require(s.size() == 5 && s[2] % cfg_.patch_side == 0, ErrorKind::Config,
          "patch_embed: feature side not divisible by patch_side");
  ag::Var grid = ag::conv3d(f3, patch_w_, patch_b_,
                            static_cast<int>(cfg_.patch_side), 0);
  ag::Var tokens = ag::volume_to_tokens(grid);  // (B, N, d)
  // Broadcast-add E_pos over the batch.
  const std::size_t b = tokens.value().dim(0);
  ag::Var pos = pos_embed_;
  const std::size_t nd = shapes_.token_count * cfg_.embed_dim;
  Tensor out(tokens.value().shape());
  for (std::size_t ib = 0; ib < b; ++ib)
    for (std::size_t i = 0; i < nd; ++i)
      out[ib * nd + i] = tokens.value()[ib * nd + i] + pos.value()[i];
  return ag::make_op(std::move(out), {tokens.node(), pos.node()},
                     [b, nd](ag::Node& self) {
                       if (self.parents[0]->requires_grad) {
                         Tensor& g = self.parents[0]->ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i];
                       }
                       if (self.parents[1]->requires_grad) {
                         Tensor& g = self.parents[1]->ensure_grad();
                         for (std::size_t ib = 0; ib < b; ++ib)
                           for (std::size_t i = 0; i < nd; ++i)
                             g[i] += self.grad[ib * nd + i];
                       }
                     });
}

ag::Var SegModel::transformer_encode(const ag::Var& tokens) {
  const Shape& s = tokens.value().shape();
  require(s.size() == 3 && s[1] == shapes_.token_count &&
              s[2] == cfg_.embed_dim,
          ErrorKind::Shape, "transformer_encode: bad token shape");
  const double attn_scale =
      1.0 / std::sqrt(static_cast<double>(shapes_.head_dim));
  ag::Var h = tokens;
  for (auto& blk : vit_) {
    // Pre-norm attention with residual.
    ag::Var n1 = ag::layernorm(h, blk.ln1_scale, blk.ln1_shift);
    ag::Var q = ag::split_heads(ag::linear(n1, blk.wq, blk.bq), cfg_.num_heads);
    ag::Var k = ag::split_heads(ag::linear(n1, blk.wk, blk.bk), cfg_.num_heads);
    ag::Var v = ag::split_heads(ag::linear(n1, blk.wv, blk.bv), cfg_.num_heads);
    ag::Var scores = ag::scale(ag::bmm_nt(q, k), attn_scale);
    ag::Var attn = ag::softmax_lastdim(scores);
    ag::Var ctx = ag::merge_heads(ag::bmm(attn, v));
    h = ag::add(h, ag::linear(ctx, blk.wo, blk.bo));
    // Pre-norm MLP with residual.
    ag::Var n2 = ag::layernorm(h, blk.ln2_scale, blk.ln2_shift);
    ag::Var m = ag::linear(ag::gelu(ag::linear(n2, blk.mlp_w1, blk.mlp_b1)),
                           blk.mlp_w2, blk.mlp_b2);
    h = ag::add(h, m);
  }
  return h;
}

ag::Var SegModel::tokens_to_volume(const ag::Var& tokens) const {
  return ag::tokens_to_volume_broadcast(tokens, cfg_.patch_side);
}

ag::Var SegModel::decode(const ag::Var& vit_out, const ag::Var& f1,
                         const ag::Var& f2, const Mode& mode) {
  require(f1.value().shape().size() == 5 && f2.value().shape().size() == 5,
          ErrorKind::Shape, "decode: skips must be 5-D");
  ag::Var h = ag::upsample_trilinear2x(vit_out);
  h = ag::concat_channels(h, f2);
  h = apply_conv_bn_relu(dec_[0], h, mode, 1, 1);
  h = apply_conv_bn_relu(dec_[1], h, mode, 1, 1);
  h = ag::upsample_trilinear2x(h);
  h = ag::concat_channels(h, f1);
  h = apply_conv_bn_relu(dec_[2], h, mode, 1, 1);
  h = apply_conv_bn_relu(dec_[3], h, mode, 1, 1);
  h = ag::upsample_trilinear2x(h);
  h = apply_conv_bn_relu(dec_[4], h, mode, 1, 1);
  h = apply_conv_bn_relu(dec_[5], h, mode, 1, 1);
  h = ag::conv3d(h, final_w_, final_b_, 1, 0);
  return ag::channel_softmax(h);
}

SegModel::ForwardResult SegModel::forward(const Tensor& x, const Mode& mode) {
  return forward(ag::Var::leaf(x, false), mode);
}

SegModel::ForwardResult SegModel::forward(const ag::Var& x, const Mode& mode) {
  EncoderFeatures enc = cnn_encode(x, mode);
  ag::Var tokens = patch_embed(enc.f3);
  tokens = transformer_encode(tokens);
  ag::Var vit_out = tokens_to_volume(tokens);
  ag::Var prob = decode(vit_out, enc.f1, enc.f2, mode);
  return {prob, vit_out};
}

}  // namespace pfda
