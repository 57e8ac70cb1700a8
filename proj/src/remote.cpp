#include "ednerf/remote.hpp"

#include <httplib.h>

#include <cmath>
#include <cstring>

namespace ednerf {

namespace wire {

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int decode_char(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::vector<int> shape_of(const json& j, std::size_t rank) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data")) {
    throw FormatError("array payload needs 'shape' and 'data'");
  }
  std::vector<int> shape = j["shape"].get<std::vector<int>>();
  if (shape.size() != rank) throw FormatError("array payload has rank " + std::to_string(shape.size()));
  for (int d : shape) {
    if (d < 1) throw FormatError("array payload has a non-positive dimension");
  }
  return shape;
}

std::string floats_to_bytes(std::span<const float> values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, &values[i], 4);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = char((u >> (8 * b)) & 0xff);
  }
  return bytes;
}

void bytes_to_floats(const std::string& bytes, std::span<float> out) {
  if (bytes.size() != out.size() * 4) throw FormatError("array payload size does not match its shape");
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= std::uint32_t(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    std::memcpy(&out[i], &u, 4);
  }
}

}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = std::uint32_t(static_cast<unsigned char>(bytes[i])) << 16 |
                            std::uint32_t(static_cast<unsigned char>(bytes[i + 1])) << 8 |
                            std::uint32_t(static_cast<unsigned char>(bytes[i + 2]));
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = std::uint32_t(static_cast<unsigned char>(bytes[i])) << 16;
    if (rest == 2) v |= std::uint32_t(static_cast<unsigned char>(bytes[i + 1])) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
        continue;
      }
      if (pad > 0) throw FormatError("misplaced base64 padding", long(i + k));
      v[k] = decode_char(c);
      if (v[k] < 0) throw FormatError("invalid base64 character", long(i + k));
    }
    const std::uint32_t w = std::uint32_t(v[0]) << 18 | std::uint32_t(v[1]) << 12 | std::uint32_t(v[2]) << 6 | v[3];
    out += char((w >> 16) & 0xff);
    if (pad < 2) out += char((w >> 8) & 0xff);
    if (pad < 1) out += char(w & 0xff);
  }
  return out;
}

json latent_to_json(const LatentImage& latent) {
  return {{"shape", {latent.height(), latent.width(), latent.channels()}},
          {"data", base64_encode(floats_to_bytes(latent.values()))}};
}

LatentImage latent_from_json(const json& j) {
  const auto s = shape_of(j, 3);
  LatentImage out(s[0], s[1], s[2]);
  bytes_to_floats(base64_decode(j["data"].get<std::string>()), out.values());
  return out;
}

json image_to_json(const RgbImage& image) {
  return {{"shape", {image.height, image.width, 3}}, {"data", base64_encode(floats_to_bytes(image.data))}};
}

RgbImage image_from_json(const json& j) {
  const auto s = shape_of(j, 3);
  if (s[2] != 3) throw FormatError("image payload must have 3 channels");
  RgbImage out(s[0], s[1]);
  bytes_to_floats(base64_decode(j["data"].get<std::string>()), out.data);
  return out;
}

json mask_to_json(const BinaryMask& mask) {
  const auto v = mask.values();
  return {{"shape", {mask.height(), mask.width()}},
          {"data", base64_encode(std::string_view(reinterpret_cast<const char*>(v.data()), v.size()))}};
}

BinaryMask mask_from_json(const json& j) {
  const auto s = shape_of(j, 2);
  const std::string bytes = base64_decode(j["data"].get<std::string>());
  if (bytes.size() != std::size_t(s[0]) * s[1]) throw FormatError("mask payload size does not match its shape");
  std::vector<std::uint8_t> values(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) values[i] = bytes[i] != 0 ? 1 : 0;
  return BinaryMask(s[0], s[1], std::move(values));
}

}  // namespace wire

HttpJsonClient::HttpJsonClient(const ClientConfig& config) : config_(config) {
  if (config_.endpoint.empty()) throw InvalidArgument("client for model '" + config_.model + "' has no endpoint");
  client_ = std::make_unique<httplib::Client>(config_.endpoint);
  if (!client_->is_valid()) throw InvalidArgument("invalid endpoint '" + config_.endpoint + "'");
  const auto secs = std::chrono::duration<double>(config_.timeout_seconds);
  client_->set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
  client_->set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(secs));
}

HttpJsonClient::~HttpJsonClient() = default;
HttpJsonClient::HttpJsonClient(HttpJsonClient&&) noexcept = default;

json HttpJsonClient::post(const std::string& route, const json& body) {
  json request = body;
  request["model"] = config_.model;
  auto res = client_->Post(route, request.dump(), "application/json");
  if (!res) {
    throw IoError(config_.endpoint + route + ": request failed (" + httplib::to_string(res.error()) + ")");
  }
  if (res->status != 200) {
    throw IoError(config_.endpoint + route + ": HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
  }
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw FormatError(config_.endpoint + route + ": bad JSON response: " + e.what(), long(e.byte));
  }
}

LatentImage RemoteCodec::encode(const RgbImage& image) {
  const json r = http_.post("/encode", {{"image", wire::image_to_json(image)}});
  if (r.contains("scaling_factor")) scaling_factor_ = r["scaling_factor"].get<double>();
  return wire::latent_from_json(r.at("latent"));
}

RgbImage RemoteCodec::decode(const LatentImage& latent) {
  const json r = http_.post("/decode", {{"latent", wire::latent_to_json(latent)}});
  RgbImage img = wire::image_from_json(r.at("image"));
  if (img.height != latent.height() * 8 || img.width != latent.width() * 8) {
    throw FormatError("decoder returned a " + std::to_string(img.height) + "x" + std::to_string(img.width) + " image");
  }
  return img;
}

LatentImage RemoteDenoiser::predict_noise(const LatentImage& z_t, const Prompt& prompt, int t) {
  return predict_noise_batch({z_t}, {prompt}, t).at(0);
}

std::vector<LatentImage> RemoteDenoiser::predict_noise_batch(const std::vector<LatentImage>& z_t,
                                                             const std::vector<Prompt>& prompts, int t) {
  if (z_t.size() != prompts.size()) throw InvalidArgument("predict_noise_batch: latent/prompt count mismatch");
  const std::size_t n = z_t.size();
  json latents = json::array(), texts = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    latents.push_back(wire::latent_to_json(z_t[i]));
    texts.push_back("");
  }
  for (std::size_t i = 0; i < n; ++i) {
    latents.push_back(wire::latent_to_json(z_t[i]));
    texts.push_back(prompts[i].text);
  }
  const json r = http_.post("/predict_noise", {{"t", t}, {"prompts", texts}, {"latents", latents}});
  const auto& noise = r.at("noise");
  if (!noise.is_array() || noise.size() != 2 * n) throw FormatError("denoiser returned the wrong number of maps");
  std::vector<LatentImage> out;
  for (std::size_t i = 0; i < n; ++i) {
    LatentImage u = wire::latent_from_json(noise[i]);
    const LatentImage c = wire::latent_from_json(noise[n + i]);
    if (!u.same_shape(z_t[i]) || !c.same_shape(z_t[i])) throw FormatError("denoiser returned a map of the wrong shape");
    auto uv = u.values();
    auto cv = c.values();
    for (std::size_t k = 0; k < uv.size(); ++k) uv[k] = float(uv[k] + scale_ * (double(cv[k]) - uv[k]));
    out.push_back(std::move(u));
  }
  return out;
}

BinaryMask RemoteSegmenter::segment(const RgbImage& image, const std::string& prompt) {
  const json r = http_.post("/segment", {{"prompt", prompt}, {"image", wire::image_to_json(image)}});
  BinaryMask m = wire::mask_from_json(r.at("mask"));
  if (m.height() != image.height || m.width() != image.width) {
    throw FormatError("segmenter returned a mask of the wrong size");
  }
  return m;
}

namespace {

std::vector<float> unit_embedding(const json& r) {
  std::vector<float> v = r.at("embedding").get<std::vector<float>>();
  double n = 0.0;
  for (float x : v) n += double(x) * x;
  n = std::sqrt(n);
  if (v.empty() || !(n > 0.0) || !std::isfinite(n)) throw FormatError("embedder returned a degenerate vector");
  for (float& x : v) x = float(x / n);
  return v;
}

}  // namespace

std::vector<float> RemoteEmbedder::embed_image(const RgbImage& image) {
  return unit_embedding(http_.post("/embed_image", {{"image", wire::image_to_json(image)}}));
}

std::vector<float> RemoteEmbedder::embed_text(const std::string& text) {
  return unit_embedding(http_.post("/embed_text", {{"text", text}}));
}

}  // namespace ednerf
