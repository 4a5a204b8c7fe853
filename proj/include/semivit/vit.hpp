#pragma once
// A standard vision transformer (patch embedding, pre-norm blocks with
// multi-head self-attention and a GELU MLP, pooled classifier head) with an
// explicit backward pass.
//
// The model object is stateless apart from its configuration: parameters live in
// a ParamSet passed to every call, so the student and teacher share one
// architecture instance.
//
// Parameter naming scheme (also the checkpoint naming scheme):
//   patch_embed.weight [D, C*P*P]   patch_embed.bias [D]
//   pos_embed [T, D]                (learnable positional embedding only)
//   cls_token [1, D]                (cls_token pooling only)
//   blocks.<i>.norm1.{weight,bias} [D]
//   blocks.<i>.attn.qkv.{weight [3D, D], bias [3D]}
//   blocks.<i>.attn.proj.{weight [D, D], bias [D]}
//   blocks.<i>.norm2.{weight,bias} [D]
//   blocks.<i>.mlp.fc1.{weight [M, D], bias [M]}
//   blocks.<i>.mlp.fc2.{weight [D, M], bias [D]}
//   norm.{weight,bias} [D]          (applied to the pooled feature)
//   head.{weight [K, D], bias [K]}

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "semivit/params.hpp"
#include "semivit/tensor.hpp"

namespace semivit {

enum class PosEmbed { kLearnable, kSinCos };
enum class Pool { kMean, kClsToken };

std::string_view to_string(PosEmbed p);
std::string_view to_string(Pool p);
PosEmbed parse_pos_embed(std::string_view s);
Pool parse_pool(std::string_view s);

struct ViTConfig {
  int image_size = 32;
  int patch_size = 4;
  int in_chans = 3;
  int embed_dim = 192;
  int depth = 6;
  int num_heads = 3;
  double mlp_ratio = 4.0;
  int num_classes = 10;
  PosEmbed pos_embed = PosEmbed::kSinCos;
  Pool pool = Pool::kMean;
  double drop_path_rate = 0.1;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  int num_tokens() const { return num_patches() + (pool == Pool::kClsToken ? 1 : 0); }
  int head_dim() const { return embed_dim / num_heads; }
  int mlp_hidden() const { return static_cast<int>(embed_dim * mlp_ratio + 0.5); }
  // Drop-path rate of block i: linearly increasing from 0 to drop_path_rate.
  double block_drop_rate(int i) const;

  // Throws ConfigError.
  void validate() const;
};

// 2-D sine-cosine table [num_tokens, embed_dim]; the class-token row is zero.
std::vector<double> sincos_pos_embed(const ViTConfig& cfg);

template <typename T>
struct BlockCache {
  std::vector<T> x_in, ln1_xhat, ln1_rstd, h1, qkv, attn, ctx;
  std::vector<T> x_mid, ln2_xhat, ln2_rstd, h2, f1, g;
  std::vector<T> keep_attn, keep_mlp;  // per-sample drop-path scale
};

// Activations recorded by a training forward pass, consumed by backward().
template <typename T>
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<T> patches;  // [N * P, C*P*P]
  std::vector<BlockCache<T>> blocks;
  std::vector<T> pooled, pool_xhat, pool_rstd, pooled_norm;
};

template <typename T>
class VisionTransformer {
 public:
  explicit VisionTransformer(ViTConfig cfg);

  const ViTConfig& config() const { return cfg_; }

  // Zero-valued parameter set with the full layout.
  ParamSet<T> make_params() const;
  // Xavier-uniform linear weights, zero biases, unit norms, N(0, 0.02) tokens.
  ParamSet<T> init_params(std::uint64_t seed, bool zero_head = false) const;

  // Logits [N, num_classes]. Drop path is active only when `training`; its masks
  // are drawn from `drop_seed`. Pass a cache to record activations for backward.
  Tensor<T> forward(const ParamSet<T>& params, const Tensor<T>& images, bool training,
                    std::uint64_t drop_seed = 0, ForwardCache<T>* cache = nullptr) const;

  // Accumulates dLoss/dparams into `grads` given dLoss/dlogits.
  void backward(const ParamSet<T>& params, const ForwardCache<T>& cache, const Tensor<T>& dlogits,
                ParamSet<T>& grads) const;

  // Groups ordered embedding -> blocks -> head with layer-wise lr multipliers;
  // every parameter appears in exactly one group. weight_decay == 0 clears all
  // decay flags.
  std::vector<ParamGroup> param_groups(const ParamSet<T>& params, double layer_decay,
                                       double weight_decay) const;

  int num_layers() const { return cfg_.depth + 1; }

 private:
  struct BlockIdx {
    std::size_t n1w, n1b, qkv_w, qkv_b, proj_w, proj_b, n2w, n2b, fc1_w, fc1_b, fc2_w, fc2_b;
  };
  struct Layout {
    std::size_t patch_w, patch_b, pos = 0, cls = 0, norm_w, norm_b, head_w, head_b;
    std::vector<BlockIdx> blocks;
  };

  void check_images(const Tensor<T>& images) const;

  ViTConfig cfg_;
  Layout layout_;
  std::vector<T> sincos_;
};

}  // namespace semivit
