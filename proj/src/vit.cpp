#include "semivit/vit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <string>

#include "semivit/errors.hpp"
#include "semivit/kernels.hpp"
#include "semivit/losses.hpp"
#include "semivit/rng.hpp"

namespace semivit {

using kernels::Trans;

std::string_view to_string(PosEmbed p) { return p == PosEmbed::kSinCos ? "sincos" : "learnable"; }
std::string_view to_string(Pool p) { return p == Pool::kMean ? "mean" : "cls_token"; }

PosEmbed parse_pos_embed(std::string_view s) {
  if (s == "sincos") return PosEmbed::kSinCos;
  if (s == "learnable") return PosEmbed::kLearnable;
  throw ConfigError("unknown pos_embed '" + std::string(s) + "' (expected sincos|learnable)");
}

Pool parse_pool(std::string_view s) {
  if (s == "mean") return Pool::kMean;
  if (s == "cls_token") return Pool::kClsToken;
  throw ConfigError("unknown pool '" + std::string(s) + "' (expected mean|cls_token)");
}

double ViTConfig::block_drop_rate(int i) const {
  if (depth <= 1) return 0.0;
  return drop_path_rate * static_cast<double>(i) / static_cast<double>(depth - 1);
}

void ViTConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) {
    throw ConfigError("model." + field + ": " + what);
  };
  if (patch_size < 1) fail("patch_size", "must be >= 1");
  if (image_size < patch_size || image_size % patch_size != 0) {
    fail("patch_size", "must divide image_size");
  }
  if (in_chans < 1) fail("in_chans", "must be >= 1");
  if (embed_dim < 1 || num_heads < 1 || embed_dim % num_heads != 0) {
    fail("embed_dim", "must be divisible by num_heads");
  }
  if (pos_embed == PosEmbed::kSinCos && embed_dim % 4 != 0) {
    fail("embed_dim", "must be divisible by 4 for sincos positional embedding");
  }
  if (depth < 0) fail("depth", "must be >= 0");
  if (mlp_ratio <= 0) fail("mlp_ratio", "must be > 0");
  if (num_classes < 1) fail("num_classes", "must be >= 1");
  if (!(drop_path_rate >= 0 && drop_path_rate < 1)) fail("drop_path_rate", "must lie in [0, 1)");
}

std::vector<double> sincos_pos_embed(const ViTConfig& cfg) {
  const int d = cfg.embed_dim, g = cfg.grid();
  const int offset = cfg.pool == Pool::kClsToken ? 1 : 0;
  std::vector<double> table(static_cast<std::size_t>(cfg.num_tokens()) * d, 0.0);
  const int quarter = d / 4;
  for (int y = 0; y < g; ++y) {
    for (int x = 0; x < g; ++x) {
      double* row = table.data() + static_cast<std::size_t>(offset + y * g + x) * d;
      // First half encodes the column coordinate, second half the row.
      const double coord[2] = {static_cast<double>(x), static_cast<double>(y)};
      for (int half = 0; half < 2; ++half) {
        for (int i = 0; i < quarter; ++i) {
          const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / quarter);
          row[half * (d / 2) + i] = std::sin(coord[half] * omega);
          row[half * (d / 2) + quarter + i] = std::cos(coord[half] * omega);
        }
      }
    }
  }
  return table;
}

namespace {

constexpr double kLnEps = 1e-6;

template <typename T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (T(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

// Y[rows, out] = X[rows, in] * W^T + b.
template <typename T>
void linear(const T* x, std::size_t rows, int in, const T* w, const T* b, int out, T* y) {
  kernels::gemm(Trans::kNo, Trans::kYes, static_cast<int>(rows), out, in, T(1), x, in, w, in, T(0),
                y, out);
  for (std::size_t r = 0; r < rows; ++r) {
    T* yr = y + r * out;
    for (int o = 0; o < out; ++o) yr[o] += b[o];
  }
}

// Accumulates dW += dY^T X, db += colsum(dY); writes dX = dY W when dx != nullptr.
template <typename T>
void linear_backward(const T* x, const T* dy, std::size_t rows, int in, const T* w, int out, T* dw,
                     T* db, T* dx) {
  kernels::gemm(Trans::kYes, Trans::kNo, out, in, static_cast<int>(rows), T(1), dy, out, x, in,
                T(1), dw, in);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* dyr = dy + r * out;
    for (int o = 0; o < out; ++o) db[o] += dyr[o];
  }
  if (dx) {
    kernels::gemm(Trans::kNo, Trans::kNo, static_cast<int>(rows), in, out, T(1), dy, out, w, in,
                  T(0), dx, in);
  }
}

template <typename T>
void layer_norm(const T* x, std::size_t rows, int d, const T* gamma, const T* beta, T* y, T* xhat,
                T* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    double mean = 0;
    for (int k = 0; k < d; ++k) mean += xr[k];
    mean /= d;
    double var = 0;
    for (int k = 0; k < d; ++k) {
      const double c = xr[k] - mean;
      var += c * c;
    }
    var /= d;
    const T rs = static_cast<T>(1.0 / std::sqrt(var + kLnEps));
    const T m = static_cast<T>(mean);
    T* yr = y + r * d;
    for (int k = 0; k < d; ++k) {
      const T h = (xr[k] - m) * rs;
      if (xhat) xhat[r * d + k] = h;
      yr[k] = h * gamma[k] + beta[k];
    }
    if (rstd) rstd[r] = rs;
  }
}

// dx (+)= LN backward; accumulates dgamma, dbeta.
template <typename T>
void layer_norm_backward(const T* dy, const T* xhat, const T* rstd, std::size_t rows, int d,
                         const T* gamma, T* dgamma, T* dbeta, T* dx, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* dyr = dy + r * d;
    const T* hr = xhat + r * d;
    double mean_dh = 0, mean_dh_h = 0;
    for (int k = 0; k < d; ++k) {
      const double dh = static_cast<double>(dyr[k]) * gamma[k];
      mean_dh += dh;
      mean_dh_h += dh * hr[k];
      dgamma[k] += dyr[k] * hr[k];
      dbeta[k] += dyr[k];
    }
    mean_dh /= d;
    mean_dh_h /= d;
    T* dxr = dx + r * d;
    const T md = static_cast<T>(mean_dh), mdh = static_cast<T>(mean_dh_h);
    for (int k = 0; k < d; ++k) {
      const T v = rstd[r] * (dyr[k] * gamma[k] - md - hr[k] * mdh);
      dxr[k] = accumulate ? dxr[k] + v : v;
    }
  }
}

template <typename T>
void init_uniform(std::vector<T>& v, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& x : v) x = static_cast<T>(dist(rng));
}

template <typename T>
void init_trunc_normal(std::vector<T>& v, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std);
  for (auto& x : v) {
    double s;
    do s = dist(rng);
    while (std::abs(s) > 2 * std);
    x = static_cast<T>(s);
  }
}

}  // namespace

template <typename T>
VisionTransformer<T>::VisionTransformer(ViTConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  ParamSet<T> p = make_params();
  layout_.patch_w = p.index_of("patch_embed.weight");
  layout_.patch_b = p.index_of("patch_embed.bias");
  if (cfg_.pos_embed == PosEmbed::kLearnable) layout_.pos = p.index_of("pos_embed");
  if (cfg_.pool == Pool::kClsToken) layout_.cls = p.index_of("cls_token");
  for (int i = 0; i < cfg_.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i) + ".";
    layout_.blocks.push_back(BlockIdx{
        p.index_of(b + "norm1.weight"), p.index_of(b + "norm1.bias"),
        p.index_of(b + "attn.qkv.weight"), p.index_of(b + "attn.qkv.bias"),
        p.index_of(b + "attn.proj.weight"), p.index_of(b + "attn.proj.bias"),
        p.index_of(b + "norm2.weight"), p.index_of(b + "norm2.bias"),
        p.index_of(b + "mlp.fc1.weight"), p.index_of(b + "mlp.fc1.bias"),
        p.index_of(b + "mlp.fc2.weight"), p.index_of(b + "mlp.fc2.bias")});
  }
  layout_.norm_w = p.index_of("norm.weight");
  layout_.norm_b = p.index_of("norm.bias");
  layout_.head_w = p.index_of("head.weight");
  layout_.head_b = p.index_of("head.bias");
  if (cfg_.pos_embed == PosEmbed::kSinCos) {
    const auto table = sincos_pos_embed(cfg_);
    sincos_.assign(table.begin(), table.end());
  }
}

template <typename T>
ParamSet<T> VisionTransformer<T>::make_params() const {
  const std::size_t d = static_cast<std::size_t>(cfg_.embed_dim);
  const std::size_t m = static_cast<std::size_t>(cfg_.mlp_hidden());
  const std::size_t cpp = static_cast<std::size_t>(cfg_.in_chans * cfg_.patch_size * cfg_.patch_size);
  const int head = cfg_.depth + 1;
  ParamSet<T> p;
  p.add("patch_embed.weight", {d, cpp}, 0, true);
  p.add("patch_embed.bias", {d}, 0, false);
  if (cfg_.pool == Pool::kClsToken) p.add("cls_token", {1, d}, 0, false);
  if (cfg_.pos_embed == PosEmbed::kLearnable) {
    p.add("pos_embed", {static_cast<std::size_t>(cfg_.num_tokens()), d}, 0, false);
  }
  for (int i = 0; i < cfg_.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i) + ".";
    p.add(b + "norm1.weight", {d}, i + 1, false);
    p.add(b + "norm1.bias", {d}, i + 1, false);
    p.add(b + "attn.qkv.weight", {3 * d, d}, i + 1, true);
    p.add(b + "attn.qkv.bias", {3 * d}, i + 1, false);
    p.add(b + "attn.proj.weight", {d, d}, i + 1, true);
    p.add(b + "attn.proj.bias", {d}, i + 1, false);
    p.add(b + "norm2.weight", {d}, i + 1, false);
    p.add(b + "norm2.bias", {d}, i + 1, false);
    p.add(b + "mlp.fc1.weight", {m, d}, i + 1, true);
    p.add(b + "mlp.fc1.bias", {m}, i + 1, false);
    p.add(b + "mlp.fc2.weight", {d, m}, i + 1, true);
    p.add(b + "mlp.fc2.bias", {d}, i + 1, false);
  }
  p.add("norm.weight", {d}, head, false);
  p.add("norm.bias", {d}, head, false);
  p.add("head.weight", {static_cast<std::size_t>(cfg_.num_classes), d}, head, true);
  p.add("head.bias", {static_cast<std::size_t>(cfg_.num_classes)}, head, false);
  return p;
}

template <typename T>
ParamSet<T> VisionTransformer<T>::init_params(std::uint64_t seed, bool zero_head) const {
  ParamSet<T> p = make_params();
  for (auto& param : p) {
    Rng rng(derive_seed(seed, "init", {hash_label(param.name)}));
    const std::string& n = param.name;
    const bool is_weight = n.size() > 7 && n.compare(n.size() - 7, 7, ".weight") == 0;
    if (n == "cls_token" || n == "pos_embed") {
      init_trunc_normal(param.value, 0.02, rng);
    } else if (is_weight && param.shape.size() == 2) {
      if (zero_head && n == "head.weight") continue;
      const double fan_out = static_cast<double>(param.shape[0]);
      const double fan_in = static_cast<double>(param.shape[1]);
      init_uniform(param.value, std::sqrt(6.0 / (fan_in + fan_out)), rng);
    } else if (is_weight) {
      std::fill(param.value.begin(), param.value.end(), T(1));  // norm scale
    }
  }
  return p;
}

template <typename T>
void VisionTransformer<T>::check_images(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != static_cast<std::size_t>(cfg_.in_chans) ||
      images.dim(2) != static_cast<std::size_t>(cfg_.image_size) ||
      images.dim(3) != static_cast<std::size_t>(cfg_.image_size)) {
    throw std::invalid_argument("vit forward: expected [N," + std::to_string(cfg_.in_chans) + "," +
                                std::to_string(cfg_.image_size) + "," +
                                std::to_string(cfg_.image_size) + "], got " +
                                shape_string(images.shape()));
  }
}

template <typename T>
Tensor<T> VisionTransformer<T>::forward(const ParamSet<T>& params, const Tensor<T>& images,
                                        bool training, std::uint64_t drop_seed,
                                        ForwardCache<T>* cache) const {
  check_images(images);
  const std::size_t n = images.dim(0);
  const int d = cfg_.embed_dim, ps = cfg_.patch_size, g = cfg_.grid(), c = cfg_.in_chans;
  const int np = cfg_.num_patches(), nt = cfg_.num_tokens(), heads = cfg_.num_heads;
  const int dh = cfg_.head_dim(), hidden = cfg_.mlp_hidden(), img = cfg_.image_size;
  const int cpp = c * ps * ps;
  const int tok0 = cfg_.pool == Pool::kClsToken ? 1 : 0;
  const std::size_t rows = n * static_cast<std::size_t>(nt);

  // Patch extraction: patch row layout (channel, py, px).
  std::vector<T> patches(n * np * static_cast<std::size_t>(cpp));
  for (std::size_t s = 0; s < n; ++s)
    for (int gy = 0; gy < g; ++gy)
      for (int gx = 0; gx < g; ++gx) {
        T* dst = patches.data() + ((s * np) + static_cast<std::size_t>(gy * g + gx)) * cpp;
        for (int ch = 0; ch < c; ++ch)
          for (int py = 0; py < ps; ++py)
            for (int px = 0; px < ps; ++px) {
              *dst++ = images[((s * c + ch) * img + gy * ps + py) * img + gx * ps + px];
            }
      }

  std::vector<T> emb(n * np * static_cast<std::size_t>(d));
  linear(patches.data(), n * np, cpp, params[layout_.patch_w].value.data(),
         params[layout_.patch_b].value.data(), d, emb.data());

  std::vector<T> x(rows * d);
  const T* pos = cfg_.pos_embed == PosEmbed::kSinCos ? sincos_.data() : params[layout_.pos].value.data();
  for (std::size_t s = 0; s < n; ++s) {
    if (tok0) {
      const T* cls = params[layout_.cls].value.data();
      T* dst = x.data() + s * nt * d;
      for (int k = 0; k < d; ++k) dst[k] = cls[k] + pos[k];
    }
    for (int t = 0; t < np; ++t) {
      const T* src = emb.data() + (s * np + t) * d;
      T* dst = x.data() + (s * nt + t + tok0) * d;
      const T* pr = pos + static_cast<std::size_t>(t + tok0) * d;
      for (int k = 0; k < d; ++k) dst[k] = src[k] + pr[k];
    }
  }

  if (cache) {
    cache->batch = n;
    cache->patches = std::move(patches);
    cache->blocks.assign(static_cast<std::size_t>(cfg_.depth), BlockCache<T>{});
  }

  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<T> h(rows * d), qkv(rows * 3 * d), attn(static_cast<std::size_t>(nt) * nt),
      ctx(rows * d), a(rows * d), f1(rows * hidden), gg(rows * hidden), f2(rows * d);
  std::vector<T> xhat1, rstd1, xhat2, rstd2, probs;
  if (cache) {
    xhat1.resize(rows * d);
    rstd1.resize(rows);
    xhat2.resize(rows * d);
    rstd2.resize(rows);
    probs.resize(n * heads * nt * static_cast<std::size_t>(nt));
  }

  for (int bi = 0; bi < cfg_.depth; ++bi) {
    const BlockIdx& L = layout_.blocks[static_cast<std::size_t>(bi)];
    const double rate = training ? cfg_.block_drop_rate(bi) : 0.0;
    std::vector<T> keep1(n, T(1)), keep2(n, T(1));
    if (rate > 0) {
      Rng rng(derive_seed(drop_seed, "drop_path", {static_cast<std::uint64_t>(bi)}));
      const T inv = static_cast<T>(1.0 / (1.0 - rate));
      for (std::size_t s = 0; s < n; ++s) {
        keep1[s] = uniform01(rng) < rate ? T(0) : inv;
        keep2[s] = uniform01(rng) < rate ? T(0) : inv;
      }
    }
    BlockCache<T>* bc = cache ? &cache->blocks[static_cast<std::size_t>(bi)] : nullptr;
    if (bc) bc->x_in = x;

    layer_norm(x.data(), rows, d, params[L.n1w].value.data(), params[L.n1b].value.data(), h.data(),
               bc ? xhat1.data() : nullptr, bc ? rstd1.data() : nullptr);
    linear(h.data(), rows, d, params[L.qkv_w].value.data(), params[L.qkv_b].value.data(), 3 * d,
           qkv.data());
    for (std::size_t s = 0; s < n; ++s) {
      for (int hd = 0; hd < heads; ++hd) {
        const T* q = qkv.data() + s * nt * 3 * d + hd * dh;
        const T* k = q + d;
        const T* v = q + 2 * d;
        T* p = bc ? probs.data() + (s * heads + hd) * nt * nt : attn.data();
        kernels::gemm(Trans::kNo, Trans::kYes, nt, nt, dh, scale, q, 3 * d, k, 3 * d, T(0), p, nt);
        kernels::softmax_rows(nt, nt, p, nt);
        kernels::gemm(Trans::kNo, Trans::kNo, nt, dh, nt, T(1), p, nt, v, 3 * d, T(0),
                      ctx.data() + s * nt * d + hd * dh, d);
      }
    }
    linear(ctx.data(), rows, d, params[L.proj_w].value.data(), params[L.proj_b].value.data(), d,
           a.data());
    for (std::size_t s = 0; s < n; ++s) {
      const T kp = keep1[s];
      for (std::size_t i = s * nt * d; i < (s + 1) * nt * d; ++i) x[i] += kp * a[i];
    }
    if (bc) {
      bc->ln1_xhat = xhat1;
      bc->ln1_rstd = rstd1;
      bc->h1 = h;
      bc->qkv = qkv;
      bc->attn = probs;
      bc->ctx = ctx;
      bc->x_mid = x;
    }

    layer_norm(x.data(), rows, d, params[L.n2w].value.data(), params[L.n2b].value.data(), h.data(),
               bc ? xhat2.data() : nullptr, bc ? rstd2.data() : nullptr);
    linear(h.data(), rows, d, params[L.fc1_w].value.data(), params[L.fc1_b].value.data(), hidden,
           f1.data());
    for (std::size_t i = 0; i < f1.size(); ++i) gg[i] = gelu(f1[i]);
    linear(gg.data(), rows, hidden, params[L.fc2_w].value.data(), params[L.fc2_b].value.data(), d,
           f2.data());
    for (std::size_t s = 0; s < n; ++s) {
      const T kp = keep2[s];
      for (std::size_t i = s * nt * d; i < (s + 1) * nt * d; ++i) x[i] += kp * f2[i];
    }
    if (bc) {
      bc->ln2_xhat = xhat2;
      bc->ln2_rstd = rstd2;
      bc->h2 = h;
      bc->f1 = f1;
      bc->g = gg;
      bc->keep_attn = std::move(keep1);
      bc->keep_mlp = std::move(keep2);
    }
  }

  std::vector<T> pooled(n * d, T(0));
  for (std::size_t s = 0; s < n; ++s) {
    T* pr = pooled.data() + s * d;
    if (cfg_.pool == Pool::kClsToken) {
      std::copy_n(x.data() + s * nt * d, d, pr);
    } else {
      for (int t = 0; t < nt; ++t) {
        const T* xr = x.data() + (s * nt + t) * d;
        for (int k = 0; k < d; ++k) pr[k] += xr[k];
      }
      const T inv = static_cast<T>(1.0 / nt);
      for (int k = 0; k < d; ++k) pr[k] *= inv;
    }
  }
  std::vector<T> pooled_norm(n * d), pxhat(cache ? n * d : 0), prstd(cache ? n : 0);
  layer_norm(pooled.data(), n, d, params[layout_.norm_w].value.data(),
             params[layout_.norm_b].value.data(), pooled_norm.data(),
             cache ? pxhat.data() : nullptr, cache ? prstd.data() : nullptr);
  Tensor<T> logits({n, static_cast<std::size_t>(cfg_.num_classes)});
  linear(pooled_norm.data(), n, d, params[layout_.head_w].value.data(),
         params[layout_.head_b].value.data(), cfg_.num_classes, logits.data());
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->pool_xhat = std::move(pxhat);
    cache->pool_rstd = std::move(prstd);
    cache->pooled_norm = std::move(pooled_norm);
  }
  return logits;
}

template <typename T>
void VisionTransformer<T>::backward(const ParamSet<T>& params, const ForwardCache<T>& cache,
                                    const Tensor<T>& dlogits, ParamSet<T>& grads) const {
  const std::size_t n = cache.batch;
  if (dlogits.rank() != 2 || dlogits.dim(0) != n ||
      dlogits.dim(1) != static_cast<std::size_t>(cfg_.num_classes)) {
    throw std::invalid_argument("vit backward: dlogits shape " + shape_string(dlogits.shape()));
  }
  const int d = cfg_.embed_dim, np = cfg_.num_patches(), nt = cfg_.num_tokens();
  const int heads = cfg_.num_heads, dh = cfg_.head_dim(), hidden = cfg_.mlp_hidden();
  const int cpp = cfg_.in_chans * cfg_.patch_size * cfg_.patch_size;
  const int tok0 = cfg_.pool == Pool::kClsToken ? 1 : 0;
  const std::size_t rows = n * static_cast<std::size_t>(nt);
  auto G = [&](std::size_t idx) { return grads[idx].value.data(); };
  auto P = [&](std::size_t idx) { return params[idx].value.data(); };

  std::vector<T> dpn(n * d), dpooled(n * d);
  linear_backward(cache.pooled_norm.data(), dlogits.data(), n, d, P(layout_.head_w),
                  cfg_.num_classes, G(layout_.head_w), G(layout_.head_b), dpn.data());
  layer_norm_backward(dpn.data(), cache.pool_xhat.data(), cache.pool_rstd.data(), n, d,
                      P(layout_.norm_w), G(layout_.norm_w), G(layout_.norm_b), dpooled.data(),
                      false);

  std::vector<T> dx(rows * d, T(0));
  for (std::size_t s = 0; s < n; ++s) {
    const T* dp = dpooled.data() + s * d;
    if (cfg_.pool == Pool::kClsToken) {
      std::copy_n(dp, d, dx.data() + s * nt * d);
    } else {
      const T inv = static_cast<T>(1.0 / nt);
      for (int t = 0; t < nt; ++t) {
        T* r = dx.data() + (s * nt + t) * d;
        for (int k = 0; k < d; ++k) r[k] = dp[k] * inv;
      }
    }
  }

  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<T> dbranch(rows * d), dg(rows * hidden), dh_buf(rows * d), dctx(rows * d),
      dqkv(rows * 3 * d), dp(static_cast<std::size_t>(nt) * nt);

  for (int bi = cfg_.depth - 1; bi >= 0; --bi) {
    const BlockIdx& L = layout_.blocks[static_cast<std::size_t>(bi)];
    const BlockCache<T>& bc = cache.blocks[static_cast<std::size_t>(bi)];

    // MLP branch: x_out = x_mid + keep2 * fc2(gelu(fc1(ln2(x_mid))))
    for (std::size_t s = 0; s < n; ++s) {
      const T kp = bc.keep_mlp[s];
      for (std::size_t i = s * nt * d; i < (s + 1) * nt * d; ++i) dbranch[i] = kp * dx[i];
    }
    linear_backward(bc.g.data(), dbranch.data(), rows, hidden, P(L.fc2_w), d, G(L.fc2_w),
                    G(L.fc2_b), dg.data());
    for (std::size_t i = 0; i < dg.size(); ++i) dg[i] *= gelu_grad(bc.f1[i]);
    linear_backward(bc.h2.data(), dg.data(), rows, d, P(L.fc1_w), hidden, G(L.fc1_w), G(L.fc1_b),
                    dh_buf.data());
    layer_norm_backward(dh_buf.data(), bc.ln2_xhat.data(), bc.ln2_rstd.data(), rows, d, P(L.n2w),
                        G(L.n2w), G(L.n2b), dx.data(), true);

    // Attention branch: x_mid = x_in + keep1 * proj(attn(ln1(x_in)))
    for (std::size_t s = 0; s < n; ++s) {
      const T kp = bc.keep_attn[s];
      for (std::size_t i = s * nt * d; i < (s + 1) * nt * d; ++i) dbranch[i] = kp * dx[i];
    }
    linear_backward(bc.ctx.data(), dbranch.data(), rows, d, P(L.proj_w), d, G(L.proj_w),
                    G(L.proj_b), dctx.data());
    for (std::size_t s = 0; s < n; ++s) {
      for (int hd = 0; hd < heads; ++hd) {
        const T* q = bc.qkv.data() + s * nt * 3 * d + hd * dh;
        const T* k = q + d;
        const T* v = q + 2 * d;
        T* dq = dqkv.data() + s * nt * 3 * d + hd * dh;
        T* dk = dq + d;
        T* dv = dq + 2 * d;
        const T* pr = bc.attn.data() + (s * heads + hd) * nt * nt;
        const T* dout = dctx.data() + s * nt * d + hd * dh;
        kernels::gemm(Trans::kYes, Trans::kNo, nt, dh, nt, T(1), pr, nt, dout, d, T(0), dv, 3 * d);
        kernels::gemm(Trans::kNo, Trans::kYes, nt, nt, dh, T(1), dout, d, v, 3 * d, T(0), dp.data(),
                      nt);
        for (int r = 0; r < nt; ++r) {
          T* dpr = dp.data() + r * nt;
          const T* prr = pr + r * nt;
          T dot = 0;
          for (int cidx = 0; cidx < nt; ++cidx) dot += dpr[cidx] * prr[cidx];
          for (int cidx = 0; cidx < nt; ++cidx) dpr[cidx] = prr[cidx] * (dpr[cidx] - dot) * scale;
        }
        kernels::gemm(Trans::kNo, Trans::kNo, nt, dh, nt, T(1), dp.data(), nt, k, 3 * d, T(0), dq,
                      3 * d);
        kernels::gemm(Trans::kYes, Trans::kNo, nt, dh, nt, T(1), dp.data(), nt, q, 3 * d, T(0), dk,
                      3 * d);
      }
    }
    linear_backward(bc.h1.data(), dqkv.data(), rows, d, P(L.qkv_w), 3 * d, G(L.qkv_w), G(L.qkv_b),
                    dh_buf.data());
    layer_norm_backward(dh_buf.data(), bc.ln1_xhat.data(), bc.ln1_rstd.data(), rows, d, P(L.n1w),
                        G(L.n1w), G(L.n1b), dx.data(), true);
  }

  // Embedding.
  std::vector<T> demb(n * np * static_cast<std::size_t>(d));
  for (std::size_t s = 0; s < n; ++s) {
    for (int t = 0; t < np; ++t) {
      std::copy_n(dx.data() + (s * nt + t + tok0) * d, d, demb.data() + (s * np + t) * d);
    }
  }
  linear_backward(cache.patches.data(), demb.data(), n * np, cpp, P(layout_.patch_w), d,
                  G(layout_.patch_w), G(layout_.patch_b), static_cast<T*>(nullptr));
  if (cfg_.pos_embed == PosEmbed::kLearnable) {
    T* gp = G(layout_.pos);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < static_cast<std::size_t>(nt) * d; ++i) gp[i] += dx[s * nt * d + i];
  }
  if (tok0) {
    T* gc = G(layout_.cls);
    for (std::size_t s = 0; s < n; ++s)
      for (int k = 0; k < d; ++k) gc[k] += dx[s * nt * d + k];
  }
}

template <typename T>
std::vector<ParamGroup> VisionTransformer<T>::param_groups(const ParamSet<T>& params,
                                                           double layer_decay,
                                                           double weight_decay) const {
  std::map<std::pair<int, bool>, ParamGroup> by_key;
  for (std::size_t i = 0; i < params.count(); ++i) {
    const bool wd = weight_decay > 0 && params[i].weight_decay;
    auto& g = by_key[{params[i].layer_id, wd}];
    g.layer_id = params[i].layer_id;
    g.weight_decay = wd;
    g.lr_multiplier = layer_multiplier(params[i].layer_id, num_layers(), layer_decay);
    g.indices.push_back(i);
  }
  std::vector<ParamGroup> groups;
  for (auto& [key, g] : by_key) groups.push_back(std::move(g));
  return groups;
}

template class VisionTransformer<float>;
template class VisionTransformer<double>;

}  // namespace semivit
