#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "vitmat/ops.hpp"
#include "vitmat/tensor.hpp"

namespace vitmat {

enum class Mode { train, infer };

struct ViTConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 768;
  std::size_t depth = 12;
  std::size_t heads = 12;
  double mlp_ratio = 4.0;
  std::size_t num_classes = 11;
  double dropout_rate = 0.0;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t num_tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * 3; }
  std::size_t head_dim() const { return embed_dim / heads; }
  std::size_t hidden_dim() const { return static_cast<std::size_t>(std::llround(mlp_ratio * embed_dim)); }

  void validate() const {
    if (patch_size == 0 || image_size == 0) throw ConfigError("image_size and patch_size must be positive");
    if (image_size % patch_size != 0)
      throw ConfigError("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                        std::to_string(patch_size));
    if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0)
      throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by heads " +
                        std::to_string(heads));
    if (depth == 0) throw ConfigError("depth must be >= 1");
    if (!(mlp_ratio > 0.0) || hidden_dim() == 0) throw ConfigError("mlp_ratio must be positive");
    if (num_classes == 0) throw ConfigError("num_classes must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  }

  /// ViT-B/16: D=768, L=12, H=12, mlp_ratio 4, 224 px input.
  static ViTConfig base16(std::size_t classes) {
    ViTConfig c;
    c.num_classes = classes;
    return c;
  }

  /// Small preset used by tests: 32 px input, 8 px patches, D=64, L=2, H=4.
  static ViTConfig tiny(std::size_t classes) {
    ViTConfig c;
    c.image_size = 32;
    c.patch_size = 8;
    c.embed_dim = 64;
    c.depth = 2;
    c.heads = 4;
    c.num_classes = classes;
    return c;
  }

  static ViTConfig preset(const std::string& name, std::size_t classes) {
    if (name == "base16" || name == "vit-b16" || name == "base") return base16(classes);
    if (name == "tiny" || name == "vit-tiny") return tiny(classes);
    throw ConfigError("unknown model preset '" + name + "'");
  }

  bool operator==(const ViTConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ViTConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"embed_dim", c.embed_dim},
                     {"depth", c.depth},           {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio},
                     {"num_classes", c.num_classes}, {"dropout_rate", c.dropout_rate}};
}

inline void from_json(const nlohmann::json& j, ViTConfig& c) {
  ViTConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.depth = j.value("depth", d.depth);
  c.heads = j.value("heads", d.heads);
  c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
}

/// Every learnable array, keyed by canonical dotted name. std::map keeps the
/// names sorted, which is also the checkpoint order.
template <typename T>
struct ViTParams {
  std::map<std::string, Tensor<T>> arrays;

  Tensor<T>& at(const std::string& name) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw ConfigError("missing parameter array '" + name + "'");
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw ConfigError("missing parameter array '" + name + "'");
    return it->second;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [_, t] : arrays) n += t.numel();
    return n;
  }

  /// Same names and shapes, all zeros. Used as a gradient buffer.
  ViTParams zeros_like() const {
    ViTParams z;
    for (const auto& [name, t] : arrays) z.arrays.emplace(name, Tensor<T>(t.shape()));
    return z;
  }

  template <typename U>
  ViTParams<U> cast() const {
    ViTParams<U> out;
    for (const auto& [name, t] : arrays) out.arrays.emplace(name, t.template cast<U>());
    return out;
  }

  bool operator==(const ViTParams&) const = default;
};

inline std::string block_prefix(std::size_t i) { return "block." + std::to_string(i) + "."; }

/// Canonical name -> shape for a config.
inline std::map<std::string, Shape> expected_shapes(const ViTConfig& cfg) {
  const std::size_t d = cfg.embed_dim, h = cfg.hidden_dim();
  std::map<std::string, Shape> s;
  s["patch_embed.weight"] = {cfg.patch_dim(), d};
  s["patch_embed.bias"] = {d};
  s["cls_token"] = {1, d};
  s["pos_embed"] = {cfg.num_tokens(), d};
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::string p = block_prefix(i);
    s[p + "ln1.gamma"] = {d};
    s[p + "ln1.beta"] = {d};
    for (const char* w : {"wq", "wk", "wv", "wo"}) s[p + "attn." + w] = {d, d};
    // No key bias: adding b to every key shifts each softmax row by a
    // constant, so it never changes the output and its gradient is zero.
    for (const char* b : {"bq", "bv", "bo"}) s[p + "attn." + b] = {d};
    s[p + "ln2.gamma"] = {d};
    s[p + "ln2.beta"] = {d};
    s[p + "mlp.w1"] = {d, h};
    s[p + "mlp.b1"] = {h};
    s[p + "mlp.w2"] = {h, d};
    s[p + "mlp.b2"] = {d};
  }
  s["norm.gamma"] = {d};
  s["norm.beta"] = {d};
  s["head.weight"] = {d, cfg.num_classes};
  s["head.bias"] = {cfg.num_classes};
  return s;
}

/// Throws ConfigError naming the first (in sorted order) missing, misshapen
/// or unexpected array.
template <typename T>
void validate_params(const ViTParams<T>& params, const ViTConfig& cfg) {
  const auto shapes = expected_shapes(cfg);
  for (const auto& [name, shape] : shapes) {
    auto it = params.arrays.find(name);
    if (it == params.arrays.end()) throw ConfigError("parameter array '" + name + "' is missing");
    if (it->second.shape() != shape)
      throw ConfigError("parameter array '" + name + "' has shape " + shape_str(it->second.shape()) +
                        ", config expects " + shape_str(shape));
  }
  for (const auto& [name, _] : params.arrays)
    if (!shapes.contains(name)) throw ConfigError("unexpected parameter array '" + name + "'");
}

namespace detail {
inline bool is_weight_matrix(const std::string& name) {
  return name == "patch_embed.weight" || name == "head.weight" || name.ends_with(".wq") || name.ends_with(".wk") ||
         name.ends_with(".wv") || name.ends_with(".wo") || name.ends_with(".w1") || name.ends_with(".w2");
}
// std of a standard normal truncated to [-2, 2]
inline constexpr double kTruncatedStdFactor = 0.87962566103423978;
}  // namespace detail

/// Weight matrices ~ truncated normal at +-2 sigma, rescaled so the std is
/// 0.02; biases and LN beta 0; LN gamma 1; cls_token and pos_embed ~ N(0, 0.02).
/// Arrays are drawn in sorted-name order from one stream.
template <typename T>
ViTParams<T> init_params(const ViTConfig& cfg, Rng& rng) {
  cfg.validate();
  ViTParams<T> p;
  for (const auto& [name, shape] : expected_shapes(cfg)) {
    Tensor<T> t(shape);
    if (detail::is_weight_matrix(name)) {
      const double sd = 0.02 / detail::kTruncatedStdFactor;
      for (auto& v : t.data()) v = static_cast<T>(rng.truncated_normal(0.0, sd));
    } else if (name == "cls_token" || name == "pos_embed") {
      for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, 0.02));
    } else if (name.ends_with(".gamma")) {
      t.fill(T(1));
    }
    p.arrays.emplace(name, std::move(t));
  }
  return p;
}

/// Rows are patches in row-major patch order (i = patch_row * grid + patch_col);
/// within a row, element (dy * p + dx) * 3 + channel.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch_size) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw DimensionError("patchify: expected HxWx3 image tensor, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (patch_size == 0 || h % patch_size != 0 || w % patch_size != 0)
    throw ConfigError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                      " is not divisible by patch size " + std::to_string(patch_size));
  const std::size_t gh = h / patch_size, gw = w / patch_size, pd = patch_size * patch_size * 3;
  Tensor<T> out({gh * gw, pd});
  for (std::size_t pr = 0; pr < gh; ++pr)
    for (std::size_t pc = 0; pc < gw; ++pc) {
      T* row = out.data().data() + (pr * gw + pc) * pd;
      for (std::size_t dy = 0; dy < patch_size; ++dy) {
        const T* src = image.data().data() + ((pr * patch_size + dy) * w + pc * patch_size) * 3;
        std::copy(src, src + patch_size * 3, row + dy * patch_size * 3);
      }
    }
  return out;
}

template <typename T>
Tensor<T> embed(const Tensor<T>& patches, const ViTParams<T>& params) {
  const auto& w = params.at("patch_embed.weight");
  const auto& cls = params.at("cls_token");
  const auto& pos = params.at("pos_embed");
  if (patches.rank() != 2 || pos.rows() != patches.rows() + 1)
    throw DimensionError("embed: patches " + shape_str(patches.shape()) + " vs pos_embed " + shape_str(pos.shape()));
  const auto proj = ops::linear(patches, w, params.at("patch_embed.bias"));
  const std::size_t d = w.cols();
  Tensor<T> tokens(pos.shape());
  for (std::size_t c = 0; c < d; ++c) tokens(0, c) = cls[c] + pos(0, c);
  for (std::size_t r = 0; r < proj.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) tokens(r + 1, c) = proj(r, c) + pos(r + 1, c);
  return tokens;
}

template <typename T>
struct AttentionCache {
  Tensor<T> input;
  Tensor<T> q, k, v;
  std::vector<Tensor<T>> probs;  // one (S x S) matrix per head
  Tensor<T> concat;
};

template <typename T>
struct BlockCache {
  Tensor<T> input;
  ops::LayerNormOutput<T> ln1;
  AttentionCache<T> attn;
  std::vector<T> attn_mask;  // dropout scales, empty when dropout is off
  ops::LayerNormOutput<T> ln2;
  Tensor<T> pre_gelu;
  Tensor<T> post_gelu;
  std::vector<T> mlp_mask;
};

template <typename T>
struct ForwardCache {
  Tensor<T> patches;
  std::vector<BlockCache<T>> blocks;
  ops::LayerNormOutput<T> final_ln;
  Tensor<T> cls_features;  // 1 x D, final-LN class token
  Tensor<T> logits;        // K
};

namespace detail {

template <typename T>
AttentionCache<T> attention_forward(const Tensor<T>& x, const ViTParams<T>& params, const std::string& p,
                                    std::size_t heads, Tensor<T>& out) {
  const std::size_t d = x.cols();
  if (heads == 0 || d % heads != 0)
    throw ConfigError("mhsa: embed dim " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  const std::size_t dk = d / heads;
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dk));
  AttentionCache<T> c;
  c.input = x;
  c.q = ops::linear(x, params.at(p + "attn.wq"), params.at(p + "attn.bq"));
  c.k = ops::matmul(x, params.at(p + "attn.wk"));
  c.v = ops::linear(x, params.at(p + "attn.wv"), params.at(p + "attn.bv"));
  c.concat = Tensor<T>(x.shape());
  c.probs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = ops::slice_cols(c.q, h * dk, dk);
    const auto kh = ops::slice_cols(c.k, h * dk, dk);
    const auto vh = ops::slice_cols(c.v, h * dk, dk);
    auto probs = ops::softmax(ops::scale(ops::matmul_bt(qh, kh), inv_sqrt_dk), 1);
    ops::assign_cols(c.concat, ops::matmul(probs, vh), h * dk);
    c.probs.push_back(std::move(probs));
  }
  out = ops::linear(c.concat, params.at(p + "attn.wo"), params.at(p + "attn.bo"));
  return c;
}

template <typename T>
Tensor<T> attention_backward(const AttentionCache<T>& c, const ViTParams<T>& params, const std::string& p,
                             const Tensor<T>& dout, ViTParams<T>& grads) {
  const std::size_t d = c.input.cols();
  const std::size_t heads = c.probs.size();
  const std::size_t dk = d / heads;
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(dk));

  auto go = ops::linear_backward(c.concat, params.at(p + "attn.wo"), dout);
  ops::accumulate(grads.at(p + "attn.wo"), go.dw);
  ops::accumulate(grads.at(p + "attn.bo"), go.db);

  Tensor<T> dq(c.q.shape()), dk_all(c.k.shape()), dv(c.v.shape());
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = ops::slice_cols(c.q, h * dk, dk);
    const auto kh = ops::slice_cols(c.k, h * dk, dk);
    const auto vh = ops::slice_cols(c.v, h * dk, dk);
    const auto doh = ops::slice_cols(go.dx, h * dk, dk);
    const auto& probs = c.probs[h];
    const auto dprobs = ops::matmul_bt(doh, vh);
    ops::assign_cols(dv, ops::matmul_at(probs, doh), h * dk);
    const auto dscores = ops::scale(ops::softmax_backward(probs, dprobs, 1), inv_sqrt_dk);
    ops::assign_cols(dq, ops::matmul(dscores, kh), h * dk);
    ops::assign_cols(dk_all, ops::matmul_at(dscores, qh), h * dk);
  }

  Tensor<T> dx(c.input.shape());
  const std::pair<const char*, const Tensor<T>*> proj[] = {{"q", &dq}, {"k", &dk_all}, {"v", &dv}};
  for (const auto& [suffix, dproj] : proj) {
    const std::string wname = p + "attn.w" + suffix;
    auto g = ops::linear_backward(c.input, params.at(wname), *dproj);
    ops::accumulate(grads.at(wname), g.dw);
    if (*suffix != 'k') ops::accumulate(grads.at(p + "attn.b" + suffix), g.db);
    ops::accumulate(dx, g.dx);
  }
  return dx;
}

template <typename T>
std::vector<T> dropout_mask(std::size_t n, double rate, Rng& rng) {
  std::vector<T> mask(n);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& m : mask) m = rng.bernoulli(rate) ? T(0) : keep_scale;
  return mask;
}

template <typename T>
void apply_mask(Tensor<T>& t, const std::vector<T>& mask) {
  for (std::size_t i = 0; i < mask.size(); ++i) t[i] *= mask[i];
}

}  // namespace detail

/// Multi-head self-attention of block `block` on a (tokens x D) sequence.
template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const ViTParams<T>& params, std::size_t block, std::size_t heads) {
  Tensor<T> out;
  detail::attention_forward(x, params, block_prefix(block), heads, out);
  return out;
}

/// Attention probabilities per head, for inspection and tests.
template <typename T>
std::vector<Tensor<T>> attention_probs(const Tensor<T>& x, const ViTParams<T>& params, std::size_t block,
                                       std::size_t heads) {
  Tensor<T> out;
  return detail::attention_forward(x, params, block_prefix(block), heads, out).probs;
}

/// Pre-LN block: y = x + MHSA(LN1(x)); z = y + W2 gelu(W1 LN2(y) + b1) + b2.
/// Dropout (train mode, rate > 0, rng given) scales each branch output.
template <typename T>
Tensor<T> encoder_block_forward(const Tensor<T>& x, const ViTParams<T>& params, std::size_t block,
                                const ViTConfig& cfg, BlockCache<T>& cache, Mode mode = Mode::infer,
                                Rng* rng = nullptr) {
  const std::string p = block_prefix(block);
  const bool drop = mode == Mode::train && cfg.dropout_rate > 0.0 && rng != nullptr;
  cache.input = x;
  cache.ln1 = ops::layer_norm(x, params.at(p + "ln1.gamma"), params.at(p + "ln1.beta"));
  Tensor<T> attn_out;
  cache.attn = detail::attention_forward(cache.ln1.out, params, p, cfg.heads, attn_out);
  cache.attn_mask.clear();
  if (drop) {
    cache.attn_mask = detail::dropout_mask<T>(attn_out.numel(), cfg.dropout_rate, *rng);
    detail::apply_mask(attn_out, cache.attn_mask);
  }
  const auto y = ops::add(x, attn_out);
  cache.ln2 = ops::layer_norm(y, params.at(p + "ln2.gamma"), params.at(p + "ln2.beta"));
  cache.pre_gelu = ops::linear(cache.ln2.out, params.at(p + "mlp.w1"), params.at(p + "mlp.b1"));
  cache.post_gelu = ops::gelu(cache.pre_gelu);
  auto mlp_out = ops::linear(cache.post_gelu, params.at(p + "mlp.w2"), params.at(p + "mlp.b2"));
  cache.mlp_mask.clear();
  if (drop) {
    cache.mlp_mask = detail::dropout_mask<T>(mlp_out.numel(), cfg.dropout_rate, *rng);
    detail::apply_mask(mlp_out, cache.mlp_mask);
  }
  return ops::add(y, mlp_out);
}

template <typename T>
Tensor<T> encoder_block(const Tensor<T>& x, const ViTParams<T>& params, std::size_t block, const ViTConfig& cfg) {
  BlockCache<T> cache;
  return encoder_block_forward(x, params, block, cfg, cache);
}

/// Accumulates parameter gradients into `grads` and returns d(input).
template <typename T>
Tensor<T> encoder_block_backward(const BlockCache<T>& c, const ViTParams<T>& params, std::size_t block,
                                 const Tensor<T>& dz, ViTParams<T>& grads) {
  const std::string p = block_prefix(block);
  // z = y + mlp(y)
  Tensor<T> dmlp = dz;
  if (!c.mlp_mask.empty()) detail::apply_mask(dmlp, c.mlp_mask);
  auto g2 = ops::linear_backward(c.post_gelu, params.at(p + "mlp.w2"), dmlp);
  ops::accumulate(grads.at(p + "mlp.w2"), g2.dw);
  ops::accumulate(grads.at(p + "mlp.b2"), g2.db);
  const auto dpre = ops::gelu_backward(c.pre_gelu, g2.dx);
  auto g1 = ops::linear_backward(c.ln2.out, params.at(p + "mlp.w1"), dpre);
  ops::accumulate(grads.at(p + "mlp.w1"), g1.dw);
  ops::accumulate(grads.at(p + "mlp.b1"), g1.db);
  auto gl2 = ops::layer_norm_backward(c.ln2, params.at(p + "ln2.gamma"), g1.dx);
  ops::accumulate(grads.at(p + "ln2.gamma"), gl2.dgamma);
  ops::accumulate(grads.at(p + "ln2.beta"), gl2.dbeta);
  Tensor<T> dy = dz;
  ops::accumulate(dy, gl2.dx);

  // y = x + attn(x)
  Tensor<T> dattn = dy;
  if (!c.attn_mask.empty()) detail::apply_mask(dattn, c.attn_mask);
  const auto dh = detail::attention_backward(c.attn, params, p, dattn, grads);
  auto gl1 = ops::layer_norm_backward(c.ln1, params.at(p + "ln1.gamma"), dh);
  ops::accumulate(grads.at(p + "ln1.gamma"), gl1.dgamma);
  ops::accumulate(grads.at(p + "ln1.beta"), gl1.dbeta);
  Tensor<T> dx = dy;
  ops::accumulate(dx, gl1.dx);
  return dx;
}

template <typename T>
ForwardCache<T> forward_cached(const Tensor<T>& image, const ViTParams<T>& params, const ViTConfig& cfg,
                               Mode mode = Mode::infer, Rng* rng = nullptr) {
  cfg.validate();
  validate_params(params, cfg);
  if (image.rank() != 3 || image.dim(0) != cfg.image_size || image.dim(1) != cfg.image_size || image.dim(2) != 3)
    throw DimensionError("forward: image tensor " + shape_str(image.shape()) + " does not match image_size " +
                         std::to_string(cfg.image_size));
  ForwardCache<T> c;
  c.patches = patchify(image, cfg.patch_size);
  Tensor<T> x = embed(c.patches, params);
  c.blocks.resize(cfg.depth);
  for (std::size_t b = 0; b < cfg.depth; ++b) x = encoder_block_forward(x, params, b, cfg, c.blocks[b], mode, rng);
  c.final_ln = ops::layer_norm(x, params.at("norm.gamma"), params.at("norm.beta"));
  c.cls_features = Tensor<T>({1, cfg.embed_dim});
  std::copy_n(c.final_ln.out.data().begin(), cfg.embed_dim, c.cls_features.data().begin());
  c.logits = ops::linear(c.cls_features, params.at("head.weight"), params.at("head.bias")).reshaped({cfg.num_classes});
  return c;
}

/// Logits for one preprocessed (image_size x image_size x 3) image tensor.
template <typename T>
Tensor<T> forward(const Tensor<T>& image, const ViTParams<T>& params, const ViTConfig& cfg, Mode mode = Mode::infer,
                  Rng* rng = nullptr) {
  return forward_cached(image, params, cfg, mode, rng).logits;
}

/// As backward(), adding into an existing gradient buffer.
template <typename T>
void backward_accumulate(const ForwardCache<T>& c, const ViTParams<T>& params, const ViTConfig& cfg,
                         const Tensor<T>& dlogits, ViTParams<T>& grads) {
  if (dlogits.numel() != cfg.num_classes)
    throw DimensionError("backward: dlogits " + shape_str(dlogits.shape()) + " vs num_classes " +
                         std::to_string(cfg.num_classes));
  const auto dl = dlogits.reshaped({1, cfg.num_classes});
  auto gh = ops::linear_backward(c.cls_features, params.at("head.weight"), dl);
  ops::accumulate(grads.at("head.weight"), gh.dw);
  ops::accumulate(grads.at("head.bias"), gh.db);

  Tensor<T> dfinal(c.final_ln.out.shape());
  std::copy_n(gh.dx.data().begin(), cfg.embed_dim, dfinal.data().begin());
  auto gn = ops::layer_norm_backward(c.final_ln, params.at("norm.gamma"), dfinal);
  ops::accumulate(grads.at("norm.gamma"), gn.dgamma);
  ops::accumulate(grads.at("norm.beta"), gn.dbeta);

  Tensor<T> dx = std::move(gn.dx);
  for (std::size_t b = cfg.depth; b-- > 0;) dx = encoder_block_backward(c.blocks[b], params, b, dx, grads);

  // tokens = [cls; patches W + b] + pos
  ops::accumulate(grads.at("pos_embed"), dx);
  auto& dcls = grads.at("cls_token");
  for (std::size_t j = 0; j < cfg.embed_dim; ++j) dcls[j] += dx(0, j);
  Tensor<T> dproj({cfg.num_patches(), cfg.embed_dim});
  std::copy(dx.data().begin() + cfg.embed_dim, dx.data().end(), dproj.data().begin());
  auto gp = ops::linear_backward(c.patches, params.at("patch_embed.weight"), dproj);
  ops::accumulate(grads.at("patch_embed.weight"), gp.dw);
  ops::accumulate(grads.at("patch_embed.bias"), gp.db);
}

/// Parameter gradients of a scalar loss given d(loss)/d(logits).
template <typename T>
ViTParams<T> backward(const ForwardCache<T>& c, const ViTParams<T>& params, const ViTConfig& cfg,
                      const Tensor<T>& dlogits) {
  ViTParams<T> grads = params.zeros_like();
  backward_accumulate(c, params, cfg, dlogits, grads);
  return grads;
}

}  // namespace vitmat
