#pragma once

// HTTP/JSON clients for model servers. Arrays travel as base64 of
// little-endian float32 (uint8 for masks) with an explicit shape:
//   {"shape": [H, W, C], "data": "<base64>"}
//
// Routes (all POST, JSON in and out):
//   /encode         {model, image}                       -> {latent, scaling_factor}
//   /decode         {model, latent}                      -> {image}
//   /predict_noise  {model, t, prompts: [..], latents: [..]} -> {noise: [..]}
//   /segment        {model, prompt, image}               -> {mask}
//   /embed_image    {model, image}                       -> {embedding: [..]}
//   /embed_text     {model, text}                        -> {embedding: [..]}

#include <memory>
#include <nlohmann/json.hpp>
#include <string>

#include "ednerf/config.hpp"
#include "ednerf/evaluation.hpp"
#include "ednerf/guidance.hpp"
#include "ednerf/scene_io.hpp"

namespace httplib {
class Client;
}

namespace ednerf {

namespace wire {

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

json latent_to_json(const LatentImage& latent);
LatentImage latent_from_json(const json& j);
json image_to_json(const RgbImage& image);
RgbImage image_from_json(const json& j);
json mask_to_json(const BinaryMask& mask);
/// Nonzero bytes read as 1.
BinaryMask mask_from_json(const json& j);

}  // namespace wire

/// Shared transport: one endpoint, JSON POSTs, errors become IoError.
class HttpJsonClient {
 public:
  explicit HttpJsonClient(const ClientConfig& config);
  ~HttpJsonClient();
  HttpJsonClient(HttpJsonClient&&) noexcept;
  json post(const std::string& route, const json& body);
  const ClientConfig& config() const { return config_; }

 private:
  ClientConfig config_;
  std::unique_ptr<httplib::Client> client_;
};

class RemoteCodec : public LatentCodecClient {
 public:
  explicit RemoteCodec(const ClientConfig& config) : http_(config) {}
  LatentImage encode(const RgbImage& image) override;
  RgbImage decode(const LatentImage& latent) override;
  std::string model_id() const override { return http_.config().model; }
  double scaling_factor() const override { return scaling_factor_; }

 private:
  HttpJsonClient http_;
  double scaling_factor_ = 1.0;
};

/// Applies classifier-free guidance client-side:
/// eps = eps_uncond + s (eps_cond - eps_uncond), with the empty prompt as the
/// unconditional branch. All branches of a batch go out in one request.
class RemoteDenoiser : public DenoiserClient {
 public:
  RemoteDenoiser(const ClientConfig& config, double guidance_scale) : http_(config), scale_(guidance_scale) {}
  LatentImage predict_noise(const LatentImage& z_t, const Prompt& prompt, int t) override;
  std::vector<LatentImage> predict_noise_batch(const std::vector<LatentImage>& z_t, const std::vector<Prompt>& prompts,
                                               int t) override;

 private:
  HttpJsonClient http_;
  double scale_;
};

class RemoteSegmenter : public SegmentationClient {
 public:
  explicit RemoteSegmenter(const ClientConfig& config) : http_(config) {}
  BinaryMask segment(const RgbImage& image, const std::string& prompt) override;
  std::string model_id() const override { return http_.config().model; }

 private:
  HttpJsonClient http_;
};

/// Returned embeddings are renormalized to unit length.
class RemoteEmbedder : public EmbedderClient {
 public:
  explicit RemoteEmbedder(const ClientConfig& config) : http_(config) {}
  std::vector<float> embed_image(const RgbImage& image) override;
  std::vector<float> embed_text(const std::string& text) override;

 private:
  HttpJsonClient http_;
};

}  // namespace ednerf
