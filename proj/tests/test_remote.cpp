#include "ednerf/remote.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <cmath>
#include <thread>

#include "support.hpp"

using namespace ednerf;
using namespace ednerf::testing;

namespace {

// Serves canned answers and keeps the last request body per route.
class FakeServer {
 public:
  FakeServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  void on(const std::string& route, std::function<json(const json&)> handler) {
    server_.Post(route, [this, route, handler](const httplib::Request& req, httplib::Response& res) {
      const json body = json::parse(req.body);
      {
        std::lock_guard<std::mutex> lock(mutex_);
        last_[route] = body;
      }
      try {
        res.set_content(handler(body).dump(), "application/json");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(e.what(), "text/plain");
      }
    });
  }
  void raw(const std::string& route, int status, const std::string& body) {
    server_.Post(route, [status, body](const httplib::Request&, httplib::Response& res) {
      res.status = status;
      res.set_content(body, "application/json");
    });
  }
  json last(const std::string& route) {
    std::lock_guard<std::mutex> lock(mutex_);
    return last_.at(route);
  }
  ClientConfig client(const std::string& model) const {
    return {model, "http://127.0.0.1:" + std::to_string(port_), 5.0};
  }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::mutex mutex_;
  std::map<std::string, json> last_;
};

RgbImage gradient_image(int h, int w) {
  RgbImage img(h, w);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = float(i % 17) / 16.0f;
  return img;
}

}  // namespace

TEST(Base64, KnownVectors) {
  const std::pair<const char*, const char*> cases[] = {
      {"", ""}, {"f", "Zg=="}, {"fo", "Zm8="}, {"foo", "Zm9v"}, {"foob", "Zm9vYg=="}, {"fooba", "Zm9vYmE="},
      {"foobar", "Zm9vYmFy"}};
  for (const auto& [plain, coded] : cases) {
    EXPECT_EQ(wire::base64_encode(plain), coded);
    EXPECT_EQ(wire::base64_decode(coded), plain);
  }
}

TEST(Base64, RoundTripsEveryByteAndRejectsGarbage) {
  std::string all;
  for (int b = 0; b < 256; ++b) all += char(b);
  for (std::size_t n = 0; n < 10; ++n) {
    const std::string s = all.substr(n);
    EXPECT_EQ(wire::base64_decode(wire::base64_encode(s)), s);
  }
  EXPECT_THROW(wire::base64_decode("abc"), FormatError);
  EXPECT_THROW(wire::base64_decode("ab!d"), FormatError);
  EXPECT_THROW(wire::base64_decode("a=bc"), FormatError);
  EXPECT_THROW(wire::base64_decode("ab==abcd"), FormatError);
}

TEST(Wire, ArraysRoundTripBitwise) {
  Rng rng(1);
  LatentImage z = random_latent({5, 3}, rng);
  z.values()[0] = -0.0f;
  z.values()[1] = 1e-40f;
  EXPECT_EQ(wire::latent_from_json(wire::latent_to_json(z)), z);
  const json j = wire::latent_to_json(z);
  EXPECT_EQ(j["shape"], json({5, 3, 4}));
  // little-endian float32: 1.0f is 00 00 80 3f
  LatentImage one(ImageSize{1, 1}, 1, 1.0f);
  EXPECT_EQ(wire::base64_decode(wire::latent_to_json(one)["data"].get<std::string>()), std::string("\0\0\x80\x3f", 4));

  const RgbImage img = gradient_image(4, 6);
  EXPECT_EQ(wire::image_from_json(wire::image_to_json(img)), img);

  BinaryMask m(3, 3);
  m.set(1, 1, true);
  EXPECT_EQ(wire::mask_from_json(wire::mask_to_json(m)), m);
  const json loose = {{"shape", {1, 3}}, {"data", wire::base64_encode(std::string("\0\x07\xff", 3))}};
  const BinaryMask read = wire::mask_from_json(loose);
  EXPECT_EQ(read.values()[0], 0);
  EXPECT_EQ(read.values()[1], 1);
  EXPECT_EQ(read.values()[2], 1);
}

TEST(Wire, RejectsMalformedArrays) {
  const json z = wire::latent_to_json(LatentImage(ImageSize{2, 2}));
  json bad = z;
  bad["shape"] = {2, 3, 4};
  EXPECT_THROW(wire::latent_from_json(bad), FormatError);
  bad = z;
  bad["shape"] = {2, 2};
  EXPECT_THROW(wire::latent_from_json(bad), FormatError);
  bad = z;
  bad["shape"] = {0, 2, 4};
  EXPECT_THROW(wire::latent_from_json(bad), FormatError);
  bad = z;
  bad.erase("data");
  EXPECT_THROW(wire::latent_from_json(bad), FormatError);
  EXPECT_THROW(wire::image_from_json(z), FormatError);
}

TEST(HttpJsonClient, ErrorsBecomeIoError) {
  FakeServer server;
  server.raw("/boom", 503, "overloaded");
  server.raw("/junk", 200, "{not json");
  HttpJsonClient c(server.client("m"));
  EXPECT_THROW(c.post("/boom", json::object()), IoError);
  EXPECT_THROW(c.post("/missing", json::object()), IoError);
  EXPECT_THROW(c.post("/junk", json::object()), FormatError);
  EXPECT_THROW(HttpJsonClient(ClientConfig{"m", "", 1.0}), InvalidArgument);
  // nothing listens on port 1
  HttpJsonClient dead(ClientConfig{"m", "http://127.0.0.1:1", 1.0});
  EXPECT_THROW(dead.post("/encode", json::object()), IoError);
}

TEST(RemoteCodec, EncodeDecodeProtocol) {
  FakeServer server;
  server.on("/encode", [](const json& b) {
    const RgbImage img = wire::image_from_json(b.at("image"));
    LatentImage z(img.height / 8, img.width / 8, 4, img.data[1]);
    return json{{"latent", wire::latent_to_json(z)}, {"scaling_factor", 0.18215}};
  });
  server.on("/decode", [](const json& b) {
    const LatentImage z = wire::latent_from_json(b.at("latent"));
    return json{{"image", wire::image_to_json(RgbImage(z.height() * 8, z.width() * 8, z.values()[0]))}};
  });
  RemoteCodec codec(server.client("vae-1"));
  EXPECT_EQ(codec.model_id(), "vae-1");
  const RgbImage img = gradient_image(16, 24);
  const LatentImage z = codec.encode(img);
  EXPECT_EQ(z.height(), 2);
  EXPECT_EQ(z.width(), 3);
  EXPECT_FLOAT_EQ(z.values()[0], img.data[1]);
  EXPECT_DOUBLE_EQ(codec.scaling_factor(), 0.18215);
  EXPECT_EQ(server.last("/encode")["model"], "vae-1");
  EXPECT_EQ(wire::image_from_json(server.last("/encode")["image"]), img);
  const RgbImage back = codec.decode(z);
  EXPECT_EQ(back.height, 16);
  EXPECT_FLOAT_EQ(back.data[5], z.values()[0]);
}

TEST(RemoteCodec, WrongDecodeSizeRejected) {
  FakeServer server;
  server.on("/decode", [](const json&) { return json{{"image", wire::image_to_json(RgbImage(8, 8))}}; });
  RemoteCodec codec(server.client("vae"));
  EXPECT_THROW(codec.decode(LatentImage(ImageSize{2, 2})), FormatError);
}

TEST(RemoteDenoiser, ClassifierFreeGuidanceClientSide) {
  FakeServer server;
  // unconditional branch predicts 1, conditional predicts 1 + len(prompt)
  server.on("/predict_noise", [](const json& b) {
    json noise = json::array();
    const auto& lat = b.at("latents");
    for (std::size_t i = 0; i < lat.size(); ++i) {
      LatentImage z = wire::latent_from_json(lat[i]);
      const float v = 1.0f + float(b["prompts"][i].get<std::string>().size());
      for (float& x : z.values()) x = v;
      noise.push_back(wire::latent_to_json(z));
    }
    return json{{"noise", noise}};
  });
  RemoteDenoiser d(server.client("unet"), 7.5);
  const LatentImage z(ImageSize{2, 2});
  const auto out = d.predict_noise_batch({z, z}, {{"ab"}, {"abcd"}}, 321);
  ASSERT_EQ(out.size(), 2u);
  for (float v : out[0].values()) EXPECT_FLOAT_EQ(v, 1.0f + 7.5f * 2.0f);
  for (float v : out[1].values()) EXPECT_FLOAT_EQ(v, 1.0f + 7.5f * 4.0f);
  const json req = server.last("/predict_noise");
  EXPECT_EQ(req["t"], 321);
  EXPECT_EQ(req["prompts"], json({"", "", "ab", "abcd"}));
  EXPECT_EQ(req["latents"].size(), 4u);
  const LatentImage single = d.predict_noise(z, {"abc"}, 5);
  for (float v : single.values()) EXPECT_FLOAT_EQ(v, 1.0f + 7.5f * 3.0f);
  EXPECT_THROW(d.predict_noise_batch({z}, {}, 5), InvalidArgument);
}

TEST(RemoteDenoiser, WrongReplyCountRejected) {
  FakeServer server;
  server.on("/predict_noise", [](const json&) { return json{{"noise", json::array()}}; });
  RemoteDenoiser d(server.client("unet"), 7.5);
  EXPECT_THROW(d.predict_noise(LatentImage(ImageSize{2, 2}), {"x"}, 5), FormatError);
}

TEST(RemoteSegmenter, MaskProtocol) {
  FakeServer server;
  server.on("/segment", [](const json& b) {
    const RgbImage img = wire::image_from_json(b.at("image"));
    BinaryMask m(img.height, img.width);
    if (b["prompt"] == "cube") m.set(0, 0, true);
    return json{{"mask", wire::mask_to_json(m)}};
  });
  RemoteSegmenter s(server.client("sam"));
  const BinaryMask m = s.segment(RgbImage(4, 5), "cube");
  EXPECT_EQ(m.width(), 5);
  EXPECT_EQ(m.count(), 1u);
  EXPECT_EQ(s.segment(RgbImage(4, 5), "tree").count(), 0u);
}

TEST(RemoteEmbedder, RenormalizesAndRejectsZero) {
  FakeServer server;
  server.on("/embed_text", [](const json& b) {
    if (b["text"] == "zero") return json{{"embedding", {0.0, 0.0}}};
    return json{{"embedding", {3.0, 4.0}}};
  });
  server.on("/embed_image", [](const json&) { return json{{"embedding", {0.0, 2.0, 0.0}}}; });
  RemoteEmbedder e(server.client("clip"));
  const auto t = e.embed_text("a cube");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_FLOAT_EQ(t[0], 0.6f);
  EXPECT_FLOAT_EQ(t[1], 0.8f);
  EXPECT_EQ(e.embed_image(RgbImage(2, 2)), (std::vector<float>{0.0f, 1.0f, 0.0f}));
  EXPECT_THROW(e.embed_text("zero"), FormatError);
}
