#include "ednerf/refinement.hpp"

#include <cmath>

namespace ednerf {

namespace {

void add_into(FeatureMap& dst, const FeatureMap& src) {
  for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

int default_groups(int width) {
  for (int g = std::min(32, width); g > 1; --g) {
    if (width % g == 0) return g;
  }
  return 1;
}

ParameterSet Refinement::make_layout(const RefinementConfig& c) {
  if (c.width < 1 || c.groups < 1 || c.width % c.groups != 0) {
    throw InvalidArgument("refinement width must be divisible by the group count");
  }
  if (c.size.height < 1 || c.size.width < 1) throw InvalidArgument("refinement spatial size must be positive");
  const int w = c.width;
  constexpr int z = kLatentChannels;
  ParameterSet p;
  p.add("conv_in.w", ParamGroup::network, {w, z, 3, 3});
  p.add("conv_in.b", ParamGroup::network, {w});
  int r = 0, a = 0;
  for (char kind : kChain) {
    if (kind == 'r') {
      const std::string n = "res" + std::to_string(r++);
      p.add(n + ".norm1.gamma", ParamGroup::network, {w}, 1.0f);
      p.add(n + ".norm1.beta", ParamGroup::network, {w});
      p.add(n + ".conv1.w", ParamGroup::network, {w, w, 3, 3});
      p.add(n + ".conv1.b", ParamGroup::network, {w});
      p.add(n + ".norm2.gamma", ParamGroup::network, {w}, 1.0f);
      p.add(n + ".norm2.beta", ParamGroup::network, {w});
      p.add(n + ".conv2.w", ParamGroup::network, {w, w, 3, 3});
      p.add(n + ".conv2.b", ParamGroup::network, {w});
    } else {
      const std::string n = "attn" + std::to_string(a++);
      p.add(n + ".norm.gamma", ParamGroup::network, {w}, 1.0f);
      p.add(n + ".norm.beta", ParamGroup::network, {w});
      for (const char* proj : {"q", "k", "v", "proj"}) {
        p.add(n + "." + proj + ".w", ParamGroup::network, {w, w, 1, 1});
        p.add(n + "." + proj + ".b", ParamGroup::network, {w});
      }
    }
  }
  p.add("norm_out.gamma", ParamGroup::network, {w}, 1.0f);
  p.add("norm_out.beta", ParamGroup::network, {w});
  p.add("conv_out.w", ParamGroup::network, {z, w, 3, 3});
  p.add("conv_out.b", ParamGroup::network, {z});
  return p;
}

void Refinement::bind() {
  conv_in_w_ = params_.find("conv_in.w");
  conv_in_b_ = params_.find("conv_in.b");
  norm_out_g_ = params_.find("norm_out.gamma");
  norm_out_b_ = params_.find("norm_out.beta");
  conv_out_w_ = params_.find("conv_out.w");
  conv_out_b_ = params_.find("conv_out.b");
  for (int i = 0; i < kResBlocks; ++i) {
    const std::string n = "res" + std::to_string(i);
    res_[i] = {params_.find(n + ".norm1.gamma"), params_.find(n + ".norm1.beta"), params_.find(n + ".conv1.w"),
               params_.find(n + ".conv1.b"),     params_.find(n + ".norm2.gamma"), params_.find(n + ".norm2.beta"),
               params_.find(n + ".conv2.w"),     params_.find(n + ".conv2.b")};
  }
  for (int i = 0; i < kAttnBlocks; ++i) {
    const std::string n = "attn" + std::to_string(i);
    attn_[i] = {params_.find(n + ".norm.gamma"), params_.find(n + ".norm.beta"), params_.find(n + ".q.w"),
                params_.find(n + ".q.b"),        params_.find(n + ".k.w"),       params_.find(n + ".k.b"),
                params_.find(n + ".v.w"),        params_.find(n + ".v.b"),       params_.find(n + ".proj.w"),
                params_.find(n + ".proj.b")};
  }
}

Refinement::Refinement(const RefinementConfig& config, std::uint64_t seed)
    : config_(config), params_(make_layout(config)) {
  bind();
  Rng rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& t : params_) {
    const bool weight = t.name.ends_with(".w");
    if (!weight) continue;
    if (t.name == "conv_out.w" && config_.zero_init_output) continue;
    const int fan_in = t.shape[1] * t.shape[2] * t.shape[3];
    const float scale = std::sqrt(1.0f / float(fan_in));
    for (float& v : t.values) v = scale * normal(rng);
  }
}

Refinement::Refinement(const RefinementConfig& config, ParameterSet parameters)
    : config_(config), params_(std::move(parameters)) {
  if (!params_.same_layout(make_layout(config))) {
    throw InvalidArgument("refinement parameters do not match the refinement configuration");
  }
  bind();
}

Refinement init_refinement(const RefinementConfig& config, std::uint64_t seed) { return Refinement(config, seed); }

FeatureMap Refinement::res_forward(int i, const FeatureMap& x, RefinementTape::Res* t) const {
  const ResIdx& id = res_[i];
  RefinementTape::Res local;
  RefinementTape::Res& r = t ? *t : local;
  r.in = x;
  kernels::group_norm_forward(x, p(id.g1), p(id.b1), config_.groups, r.n1, r.st1);
  kernels::silu_forward(r.n1, r.s1);
  kernels::conv2d_forward(r.s1, p(id.w1), p(id.c1), 3, r.c1);
  kernels::group_norm_forward(r.c1, p(id.g2), p(id.b2), config_.groups, r.n2, r.st2);
  kernels::silu_forward(r.n2, r.s2);
  FeatureMap out;
  kernels::conv2d_forward(r.s2, p(id.w2), p(id.c2), 3, out);
  add_into(out, x);
  return out;
}

FeatureMap Refinement::attn_forward(int i, const FeatureMap& x, RefinementTape::Attn* t) const {
  const AttnIdx& id = attn_[i];
  RefinementTape::Attn local;
  RefinementTape::Attn& a = t ? *t : local;
  a.in = x;
  kernels::group_norm_forward(x, p(id.g), p(id.b), config_.groups, a.h, a.st);
  kernels::conv2d_forward(a.h, p(id.wq), p(id.bq), 1, a.q);
  kernels::conv2d_forward(a.h, p(id.wk), p(id.bk), 1, a.k);
  kernels::conv2d_forward(a.h, p(id.wv), p(id.bv), 1, a.v);
  const float scale = 1.0f / std::sqrt(float(config_.width));
  kernels::attention_forward(a.q, a.k, a.v, scale, a.probs, a.o);
  FeatureMap out;
  kernels::conv2d_forward(a.o, p(id.wo), p(id.bo), 1, out);
  add_into(out, x);
  return out;
}

LatentImage Refinement::forward(const LatentImage& z, RefinementTape* tape) const {
  if (z.size() != config_.size || z.channels() != kLatentChannels) {
    throw InvalidArgument("refine: expected a " + std::to_string(config_.size.height) + "x" +
                          std::to_string(config_.size.width) + "x4 latent, got " + std::to_string(z.height()) + "x" +
                          std::to_string(z.width()) + "x" + std::to_string(z.channels()));
  }
  for (float v : z.values()) {
    if (!std::isfinite(v)) throw InvalidArgument("refine: non-finite input value");
  }
  RefinementTape local;
  RefinementTape& t = tape ? *tape : local;
  t.res.assign(kResBlocks, {});
  t.attn.assign(kAttnBlocks, {});
  t.input = to_feature_map(z);
  kernels::conv2d_forward(t.input, p(conv_in_w_), p(conv_in_b_), 3, t.lifted);
  FeatureMap x = t.lifted;
  int r = 0, a = 0;
  for (char kind : kChain) {
    if (kind == 'r') {
      x = res_forward(r, x, tape ? &t.res[r] : nullptr);
      ++r;
    } else {
      x = attn_forward(a, x, tape ? &t.attn[a] : nullptr);
      ++a;
    }
  }
  t.final_in = std::move(x);
  kernels::group_norm_forward(t.final_in, p(norm_out_g_), p(norm_out_b_), config_.groups, t.final_norm,
                              t.final_stats);
  kernels::silu_forward(t.final_norm, t.final_act);
  FeatureMap delta;
  kernels::conv2d_forward(t.final_act, p(conv_out_w_), p(conv_out_b_), 3, delta);
  LatentImage out = z;
  const int n = delta.pixels();
  for (int px = 0; px < n; ++px) {
    auto dst = out.pixel(px);
    for (int c = 0; c < kLatentChannels; ++c) dst[c] += delta.channel(c)[px];
  }
  return out;
}

FeatureMap Refinement::res_backward(int i, const RefinementTape::Res& t, const FeatureMap& g,
                                    ParameterSet& grads) const {
  const ResIdx& id = res_[i];
  FeatureMap g_s2, g_n2, g_c1, g_s1, g_n1, g_x;
  kernels::conv2d_backward(t.s2, p(id.w2), 3, g, &g_s2, grads[id.w2].values, grads[id.c2].values);
  kernels::silu_backward(t.n2, g_s2, g_n2);
  kernels::group_norm_backward(t.c1, p(id.g2), config_.groups, t.st2, g_n2, g_c1, grads[id.g2].values,
                               grads[id.b2].values);
  kernels::conv2d_backward(t.s1, p(id.w1), 3, g_c1, &g_s1, grads[id.w1].values, grads[id.c1].values);
  kernels::silu_backward(t.n1, g_s1, g_n1);
  kernels::group_norm_backward(t.in, p(id.g1), config_.groups, t.st1, g_n1, g_x, grads[id.g1].values,
                               grads[id.b1].values);
  add_into(g_x, g);
  return g_x;
}

FeatureMap Refinement::attn_backward(int i, const RefinementTape::Attn& t, const FeatureMap& g,
                                     ParameterSet& grads) const {
  const AttnIdx& id = attn_[i];
  FeatureMap g_o, g_q, g_k, g_v, g_h, tmp, g_x;
  kernels::conv2d_backward(t.o, p(id.wo), 1, g, &g_o, grads[id.wo].values, grads[id.bo].values);
  const float scale = 1.0f / std::sqrt(float(config_.width));
  kernels::attention_backward(t.q, t.k, t.v, scale, t.probs, g_o, g_q, g_k, g_v);
  kernels::conv2d_backward(t.h, p(id.wq), 1, g_q, &g_h, grads[id.wq].values, grads[id.bq].values);
  kernels::conv2d_backward(t.h, p(id.wk), 1, g_k, &tmp, grads[id.wk].values, grads[id.bk].values);
  add_into(g_h, tmp);
  kernels::conv2d_backward(t.h, p(id.wv), 1, g_v, &tmp, grads[id.wv].values, grads[id.bv].values);
  add_into(g_h, tmp);
  kernels::group_norm_backward(t.in, p(id.g), config_.groups, t.st, g_h, g_x, grads[id.g].values,
                               grads[id.b].values);
  add_into(g_x, g);
  return g_x;
}

LatentImage Refinement::backward(const RefinementTape& t, const LatentImage& grad_out, ParameterSet& grads) const {
  if (grad_out.size() != config_.size || grad_out.channels() != kLatentChannels) {
    throw InvalidArgument("refinement backward: gradient shape mismatch");
  }
  if (!grads.same_layout(params_)) throw InvalidArgument("refinement backward: gradient layout mismatch");
  if (t.res.size() != std::size_t(kResBlocks) || t.attn.size() != std::size_t(kAttnBlocks)) {
    throw InvalidArgument("refinement backward: tape was not recorded");
  }
  const FeatureMap g_out = to_feature_map(grad_out);
  FeatureMap g_act, g_norm, g;
  kernels::conv2d_backward(t.final_act, p(conv_out_w_), 3, g_out, &g_act, grads[conv_out_w_].values,
                           grads[conv_out_b_].values);
  kernels::silu_backward(t.final_norm, g_act, g_norm);
  kernels::group_norm_backward(t.final_in, p(norm_out_g_), config_.groups, t.final_stats, g_norm, g,
                               grads[norm_out_g_].values, grads[norm_out_b_].values);
  int r = kResBlocks, a = kAttnBlocks;
  for (int k = 5; k >= 0; --k) {
    if (kChain[k] == 'r') {
      --r;
      g = res_backward(r, t.res[r], g, grads);
    } else {
      --a;
      g = attn_backward(a, t.attn[a], g, grads);
    }
  }
  FeatureMap g_in;
  kernels::conv2d_backward(t.input, p(conv_in_w_), 3, g, &g_in, grads[conv_in_w_].values, grads[conv_in_b_].values);
  add_into(g_in, g_out);
  return to_latent_image(g_in);
}

std::vector<std::vector<float>> Refinement::attention_weights(const LatentImage& z) const {
  RefinementTape tape;
  forward(z, &tape);
  std::vector<std::vector<float>> out;
  for (auto& a : tape.attn) out.push_back(std::move(a.probs));
  return out;
}

}  // namespace ednerf
