#include "ednerf/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace ednerf {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_matrix(const FeatureMap& m) { return ConstMapMat(m.data.data(), m.channels, m.pixels()); }
MapMat as_matrix(FeatureMap& m) { return MapMat(m.data.data(), m.channels, m.pixels()); }

void check_conv(const FeatureMap& in, std::size_t weight_size, int k, int& c_out) {
  if (k < 1 || k % 2 == 0) throw InvalidArgument("conv2d: kernel size must be odd");
  const std::size_t per_out = std::size_t(in.channels) * k * k;
  if (weight_size % per_out != 0) throw InvalidArgument("conv2d: weight size mismatch");
  c_out = int(weight_size / per_out);
}

// Row r = (ci * k + dy) * k + dx, column p = y * W + x.
void im2col(const FeatureMap& in, int k, RowMat& col) {
  const int h = in.height, w = in.width, pad = k / 2;
  const int rows = in.channels * k * k;
  col.resize(rows, in.pixels());
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int ci = r / (k * k), dy = r / k % k - pad, dx = r % k - pad;
    const float* src = in.channel(ci);
    float* dst = col.data() + std::size_t(r) * in.pixels();
    for (int y = 0; y < h; ++y) {
      const int sy = y + dy;
      for (int x = 0; x < w; ++x) {
        const int sx = x + dx;
        dst[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? src[sy * w + sx] : 0.0f;
      }
    }
  }
}

void col2im(const RowMat& col, int k, FeatureMap& out) {
  const int h = out.height, w = out.width, pad = k / 2;
  std::fill(out.data.begin(), out.data.end(), 0.0f);
#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < out.channels; ++ci) {
    float* dst = out.channel(ci);
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        const float* src = col.data() + std::size_t((ci * k + dy) * k + dx) * out.pixels();
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy - pad;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + dx - pad;
            if (sx >= 0 && sx < w) dst[sy * w + sx] += src[y * w + x];
          }
        }
      }
    }
  }
}

void group_stats(const FeatureMap& in, int groups, GroupNormStats& stats, bool parallel) {
  if (groups < 1 || in.channels % groups != 0) throw InvalidArgument("group_norm: channels not divisible by groups");
  const int per = in.channels / groups;
  const std::size_t count = std::size_t(per) * in.pixels();
  stats.mean.assign(groups, 0.0f);
  stats.rstd.assign(groups, 0.0f);
#pragma omp parallel for schedule(static) if (parallel)
  for (int g = 0; g < groups; ++g) {
    const float* base = in.channel(g * per);
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < count; ++i) sum += base[i];
    const double mean = sum / double(count);
    for (std::size_t i = 0; i < count; ++i) {
      const double d = base[i] - mean;
      sq += d * d;
    }
    stats.mean[g] = float(mean);
    stats.rstd[g] = float(1.0 / std::sqrt(sq / double(count) + kGroupNormEps));
  }
}

void group_norm_apply(const FeatureMap& in, std::span<const float> gamma, std::span<const float> beta, int groups,
                      const GroupNormStats& stats, FeatureMap& out, bool parallel) {
  const int per = in.channels / groups;
  const int n = in.pixels();
  if (!out.same_shape(in)) out = FeatureMap(in.channels, in.height, in.width);
#pragma omp parallel for schedule(static) if (parallel)
  for (int c = 0; c < in.channels; ++c) {
    const int g = c / per;
    const float scale = stats.rstd[g] * gamma[c];
    const float shift = beta[c] - stats.mean[g] * scale;
    const float* src = in.channel(c);
    float* dst = out.channel(c);
    for (int i = 0; i < n; ++i) dst[i] = src[i] * scale + shift;
  }
}

void check_attention(const FeatureMap& q, const FeatureMap& k, const FeatureMap& v) {
  if (!q.same_shape(k) || !q.same_shape(v)) throw InvalidArgument("attention: q, k, v shapes differ");
}

}  // namespace

FeatureMap to_feature_map(const LatentImage& image) {
  FeatureMap m(image.channels(), image.height(), image.width());
  const int n = m.pixels();
  for (int p = 0; p < n; ++p) {
    auto px = image.pixel(p);
    for (int c = 0; c < m.channels; ++c) m.channel(c)[p] = px[c];
  }
  return m;
}

LatentImage to_latent_image(const FeatureMap& map) {
  LatentImage image(map.height, map.width, map.channels);
  const int n = map.pixels();
  for (int p = 0; p < n; ++p) {
    auto px = image.pixel(p);
    for (int c = 0; c < map.channels; ++c) px[c] = map.channel(c)[p];
  }
  return image;
}

namespace kernels {

void conv2d_forward(const FeatureMap& in, std::span<const float> weight, std::span<const float> bias, int k,
                    FeatureMap& out) {
  int c_out = 0;
  check_conv(in, weight.size(), k, c_out);
  if (bias.size() != std::size_t(c_out)) throw InvalidArgument("conv2d: bias size mismatch");
  out = FeatureMap(c_out, in.height, in.width);
  ConstMapMat w(weight.data(), c_out, in.channels * k * k);
  MapMat o = as_matrix(out);
  if (k == 1) {
    o.noalias() = w * as_matrix(in);
  } else {
    RowMat col;
    im2col(in, k, col);
    o.noalias() = w * col;
  }
  const int n = out.pixels();
#pragma omp parallel for schedule(static)
  for (int c = 0; c < c_out; ++c) {
    float* dst = out.channel(c);
    for (int i = 0; i < n; ++i) dst[i] += bias[c];
  }
}

void conv2d_backward(const FeatureMap& in, std::span<const float> weight, int k, const FeatureMap& grad_out,
                     FeatureMap* grad_in, std::span<float> grad_weight, std::span<float> grad_bias) {
  int c_out = 0;
  check_conv(in, weight.size(), k, c_out);
  if (grad_out.channels != c_out || grad_out.height != in.height || grad_out.width != in.width) {
    throw InvalidArgument("conv2d_backward: gradient shape mismatch");
  }
  const int kk = in.channels * k * k;
  ConstMapMat w(weight.data(), c_out, kk);
  ConstMapMat go = as_matrix(grad_out);
  MapMat gw(grad_weight.data(), c_out, kk);
  RowMat col;
  if (k == 1) {
    gw.noalias() += go * as_matrix(in).transpose();
  } else {
    im2col(in, k, col);
    gw.noalias() += go * col.transpose();
  }
  // Plain loop: Eigen's vectorized sum peels by address, so its rounding would depend on the allocation.
  const int n = grad_out.pixels();
  for (int c = 0; c < c_out; ++c) {
    const float* g = grad_out.channel(c);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += g[i];
    grad_bias[c] += float(s);
  }
  if (grad_in) {
    *grad_in = FeatureMap(in.channels, in.height, in.width);
    if (k == 1) {
      as_matrix(*grad_in).noalias() = w.transpose() * go;
    } else {
      RowMat gcol = w.transpose() * go;
      col2im(gcol, k, *grad_in);
    }
  }
}

void group_norm_forward(const FeatureMap& in, std::span<const float> gamma, std::span<const float> beta, int groups,
                        FeatureMap& out, GroupNormStats& stats) {
  group_stats(in, groups, stats, true);
  group_norm_apply(in, gamma, beta, groups, stats, out, true);
}

void group_norm_backward(const FeatureMap& in, std::span<const float> gamma, int groups, const GroupNormStats& stats,
                         const FeatureMap& grad_out, FeatureMap& grad_in, std::span<float> grad_gamma,
                         std::span<float> grad_beta) {
  const int per = in.channels / groups;
  const int n = in.pixels();
  const double count = double(per) * n;
  grad_in = FeatureMap(in.channels, in.height, in.width);
#pragma omp parallel for schedule(static)
  for (int g = 0; g < groups; ++g) {
    const float mean = stats.mean[g], rstd = stats.rstd[g];
    double sum_gx = 0.0, sum_gx_xhat = 0.0;
    for (int c = g * per; c < (g + 1) * per; ++c) {
      const float* x = in.channel(c);
      const float* gy = grad_out.channel(c);
      double gg = 0.0, gb = 0.0;
      for (int i = 0; i < n; ++i) {
        const double xhat = (x[i] - mean) * rstd;
        const double gxhat = double(gy[i]) * gamma[c];
        gg += gy[i] * xhat;
        gb += gy[i];
        sum_gx += gxhat;
        sum_gx_xhat += gxhat * xhat;
      }
      grad_gamma[c] += float(gg);
      grad_beta[c] += float(gb);
    }
    const double mean_gx = sum_gx / count, mean_gx_xhat = sum_gx_xhat / count;
    for (int c = g * per; c < (g + 1) * per; ++c) {
      const float* x = in.channel(c);
      const float* gy = grad_out.channel(c);
      float* gx = grad_in.channel(c);
      for (int i = 0; i < n; ++i) {
        const double xhat = (x[i] - mean) * rstd;
        const double gxhat = double(gy[i]) * gamma[c];
        gx[i] = float(rstd * (gxhat - mean_gx - xhat * mean_gx_xhat));
      }
    }
  }
}

void silu_forward(const FeatureMap& in, FeatureMap& out) {
  if (!out.same_shape(in)) out = FeatureMap(in.channels, in.height, in.width);
  const std::size_t n = in.data.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const float x = in.data[i];
    out.data[i] = x / (1.0f + std::exp(-x));
  }
}

void silu_backward(const FeatureMap& in, const FeatureMap& grad_out, FeatureMap& grad_in) {
  if (!grad_in.same_shape(in)) grad_in = FeatureMap(in.channels, in.height, in.width);
  const std::size_t n = in.data.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const float x = in.data[i];
    const float s = 1.0f / (1.0f + std::exp(-x));
    grad_in.data[i] = grad_out.data[i] * s * (1.0f + x * (1.0f - s));
  }
}

void attention_forward(const FeatureMap& q, const FeatureMap& k, const FeatureMap& v, float scale,
                       std::vector<float>& probs, FeatureMap& out) {
  check_attention(q, k, v);
  const int n = q.pixels();
  probs.resize(std::size_t(n) * n);
  MapMat p(probs.data(), n, n);
  p.noalias() = as_matrix(q).transpose() * as_matrix(k);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    float* row = probs.data() + std::size_t(i) * n;
    float peak = -INFINITY;
    for (int j = 0; j < n; ++j) {
      row[j] *= scale;
      peak = std::max(peak, row[j]);
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - peak);
      sum += row[j];
    }
    const float inv = float(1.0 / sum);
    for (int j = 0; j < n; ++j) row[j] *= inv;
  }
  out = FeatureMap(v.channels, v.height, v.width);
  as_matrix(out).noalias() = as_matrix(v) * p.transpose();
}

void attention_backward(const FeatureMap& q, const FeatureMap& k, const FeatureMap& v, float scale,
                        const std::vector<float>& probs, const FeatureMap& grad_out, FeatureMap& grad_q,
                        FeatureMap& grad_k, FeatureMap& grad_v) {
  check_attention(q, k, v);
  const int n = q.pixels();
  ConstMapMat p(probs.data(), n, n);
  ConstMapMat go = as_matrix(grad_out);
  grad_v = FeatureMap(v.channels, v.height, v.width);
  as_matrix(grad_v).noalias() = go * p;
  RowMat gs = go.transpose() * as_matrix(v);  // d/dP
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    float* g = gs.data() + std::size_t(i) * n;
    const float* pr = probs.data() + std::size_t(i) * n;
    double dot = 0.0;
    for (int j = 0; j < n; ++j) dot += double(g[j]) * pr[j];
    for (int j = 0; j < n; ++j) g[j] = pr[j] * (g[j] - float(dot)) * scale;
  }
  grad_q = FeatureMap(q.channels, q.height, q.width);
  grad_k = FeatureMap(k.channels, k.height, k.width);
  as_matrix(grad_q).noalias() = as_matrix(k) * gs.transpose();
  as_matrix(grad_k).noalias() = as_matrix(q) * gs;
}

}  // namespace kernels

namespace kernels::serial {

void conv2d_forward(const FeatureMap& in, std::span<const float> weight, std::span<const float> bias, int k,
                    FeatureMap& out) {
  int c_out = 0;
  check_conv(in, weight.size(), k, c_out);
  const int h = in.height, w = in.width, pad = k / 2;
  out = FeatureMap(c_out, h, w);
  for (int co = 0; co < c_out; ++co) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double s = bias[co];
        for (int ci = 0; ci < in.channels; ++ci) {
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
              const int sy = y + dy - pad, sx = x + dx - pad;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              s += double(weight[((std::size_t(co) * in.channels + ci) * k + dy) * k + dx]) *
                   in.channel(ci)[sy * w + sx];
            }
          }
        }
        out.channel(co)[y * w + x] = float(s);
      }
    }
  }
}

void conv2d_backward(const FeatureMap& in, std::span<const float> weight, int k, const FeatureMap& grad_out,
                     FeatureMap* grad_in, std::span<float> grad_weight, std::span<float> grad_bias) {
  int c_out = 0;
  check_conv(in, weight.size(), k, c_out);
  const int h = in.height, w = in.width, pad = k / 2;
  if (grad_in) *grad_in = FeatureMap(in.channels, h, w);
  for (int co = 0; co < c_out; ++co) {
    const float* go = grad_out.channel(co);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float g = go[y * w + x];
        grad_bias[co] += g;
        for (int ci = 0; ci < in.channels; ++ci) {
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
              const int sy = y + dy - pad, sx = x + dx - pad;
              if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
              const std::size_t wi = ((std::size_t(co) * in.channels + ci) * k + dy) * k + dx;
              grad_weight[wi] += g * in.channel(ci)[sy * w + sx];
              if (grad_in) grad_in->channel(ci)[sy * w + sx] += g * weight[wi];
            }
          }
        }
      }
    }
  }
}

void group_norm_forward(const FeatureMap& in, std::span<const float> gamma, std::span<const float> beta, int groups,
                        FeatureMap& out, GroupNormStats& stats) {
  group_stats(in, groups, stats, false);
  group_norm_apply(in, gamma, beta, groups, stats, out, false);
}

void attention_forward(const FeatureMap& q, const FeatureMap& k, const FeatureMap& v, float scale,
                       std::vector<float>& probs, FeatureMap& out) {
  check_attention(q, k, v);
  const int n = q.pixels(), c = q.channels;
  probs.assign(std::size_t(n) * n, 0.0f);
  for (int i = 0; i < n; ++i) {
    std::vector<double> logits(n);
    double peak = -INFINITY;
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int ch = 0; ch < c; ++ch) s += double(q.channel(ch)[i]) * k.channel(ch)[j];
      logits[j] = s * scale;
      peak = std::max(peak, logits[j]);
    }
    double sum = 0.0;
    for (int j = 0; j < n; ++j) sum += std::exp(logits[j] - peak);
    for (int j = 0; j < n; ++j) probs[std::size_t(i) * n + j] = float(std::exp(logits[j] - peak) / sum);
  }
  out = FeatureMap(v.channels, v.height, v.width);
  for (int ch = 0; ch < v.channels; ++ch) {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += double(probs[std::size_t(i) * n + j]) * v.channel(ch)[j];
      out.channel(ch)[i] = float(s);
    }
  }
}

void attention_backward(const FeatureMap& q, const FeatureMap& k, const FeatureMap& v, float scale,
                        const std::vector<float>& probs, const FeatureMap& grad_out, FeatureMap& grad_q,
                        FeatureMap& grad_k, FeatureMap& grad_v) {
  check_attention(q, k, v);
  const int n = q.pixels(), c = q.channels;
  grad_q = FeatureMap(c, q.height, q.width);
  grad_k = FeatureMap(c, k.height, k.width);
  grad_v = FeatureMap(v.channels, v.height, v.width);
  for (int i = 0; i < n; ++i) {
    std::vector<double> gp(n);
    double dot = 0.0;
    for (int j = 0; j < n; ++j) {
      const double pij = probs[std::size_t(i) * n + j];
      double s = 0.0;
      for (int ch = 0; ch < v.channels; ++ch) {
        s += double(grad_out.channel(ch)[i]) * v.channel(ch)[j];
        grad_v.channel(ch)[j] += float(pij * grad_out.channel(ch)[i]);
      }
      gp[j] = s;
      dot += s * pij;
    }
    for (int j = 0; j < n; ++j) {
      const double gs = probs[std::size_t(i) * n + j] * (gp[j] - dot) * scale;
      for (int ch = 0; ch < c; ++ch) {
        grad_q.channel(ch)[i] += float(gs * k.channel(ch)[j]);
        grad_k.channel(ch)[j] += float(gs * q.channel(ch)[i]);
      }
    }
  }
}

}  // namespace kernels::serial

}  // namespace ednerf
