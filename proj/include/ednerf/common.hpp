#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ednerf {

using Rng = std::mt19937_64;

inline constexpr int kLatentChannels = 4;
inline constexpr int kLatentSize = 64;
inline constexpr int kImageSize = 512;

using Latent4 = std::array<float, kLatentChannels>;

/// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file content. `location` names the offending
/// record (row index, byte offset) when one applies, else -1.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, long location = -1)
      : Error(location >= 0 ? what + " (at " + std::to_string(location) + ")" : what),
        location_(location) {}
  long location() const { return location_; }

 private:
  long location_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

struct ImageSize {
  int height = kLatentSize;
  int width = kLatentSize;
  int pixels() const { return height * width; }
  bool operator==(const ImageSize&) const = default;
};

/// Channel-last, row-major feature map. The default shape is the 64x64x4
/// latent of the image codec.
class LatentImage {
 public:
  LatentImage() : LatentImage(kLatentSize, kLatentSize) {}
  LatentImage(int height, int width, int channels = kLatentChannels, float fill = 0.0f);
  explicit LatentImage(ImageSize size, int channels = kLatentChannels, float fill = 0.0f)
      : LatentImage(size.height, size.width, channels, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  ImageSize size() const { return {height_, width_}; }
  std::size_t numel() const { return data_.size(); }

  float& at(int row, int col, int c) { return data_[index(row, col, c)]; }
  float at(int row, int col, int c) const { return data_[index(row, col, c)]; }

  std::span<float> pixel(int p) { return {data_.data() + std::size_t(p) * channels_, std::size_t(channels_)}; }
  std::span<const float> pixel(int p) const {
    return {data_.data() + std::size_t(p) * channels_, std::size_t(channels_)};
  }

  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  bool same_shape(const LatentImage& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  bool operator==(const LatentImage&) const = default;

 private:
  std::size_t index(int row, int col, int c) const {
    return (std::size_t(row) * width_ + col) * channels_ + c;
  }

  int height_;
  int width_;
  int channels_;
  std::vector<float> data_;
};

/// Per-pixel {0,1} gate; shared across all latent channels.
class BinaryMask {
 public:
  BinaryMask() : BinaryMask(kLatentSize, kLatentSize) {}
  BinaryMask(int height, int width, std::uint8_t fill = 0);
  /// Throws InvalidArgument if any value is not 0 or 1.
  BinaryMask(int height, int width, std::vector<std::uint8_t> values);

  int height() const { return height_; }
  int width() const { return width_; }
  ImageSize size() const { return {height_, width_}; }
  std::uint8_t at(int row, int col) const { return data_[std::size_t(row) * width_ + col]; }
  void set(int row, int col, bool on) { data_[std::size_t(row) * width_ + col] = on ? 1 : 0; }
  std::uint8_t operator[](std::size_t p) const { return data_[p]; }
  std::span<const std::uint8_t> values() const { return data_; }
  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> data_;
};

/// Channel-last float RGB image with values nominally in [0, 1].
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  RgbImage() = default;
  RgbImage(int h, int w, float fill = 0.0f) : height(h), width(w), data(std::size_t(h) * w * 3, fill) {}
  float& at(int row, int col, int c) { return data[(std::size_t(row) * width + col) * 3 + c]; }
  float at(int row, int col, int c) const { return data[(std::size_t(row) * width + col) * 3 + c]; }
  bool operator==(const RgbImage&) const = default;
};

/// Parameter groups map onto separate learning rates.
enum class ParamGroup : std::uint8_t { density = 0, appearance = 1, network = 2 };

struct Tensor {
  std::string name;
  ParamGroup group = ParamGroup::network;
  std::vector<int> shape;
  std::vector<float> values;
};

/// Ordered collection of named tensors. Gradients and optimizer moments use
/// a set with the same layout as the parameters they belong to.
class ParameterSet {
 public:
  std::size_t add(std::string name, ParamGroup group, std::vector<int> shape, float fill = 0.0f);

  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  std::size_t size() const { return tensors_.size(); }
  std::size_t find(const std::string& name) const;
  std::size_t total_values() const;

  std::vector<Tensor>::iterator begin() { return tensors_.begin(); }
  std::vector<Tensor>::iterator end() { return tensors_.end(); }
  std::vector<Tensor>::const_iterator begin() const { return tensors_.begin(); }
  std::vector<Tensor>::const_iterator end() const { return tensors_.end(); }

  ParameterSet zeros_like() const;
  void set_zero();
  bool same_layout(const ParameterSet& other) const;
  /// this += other (layouts must match).
  void accumulate(const ParameterSet& other);
  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<Tensor> tensors_;
};

/// Stateless 64-bit mixer used for order-independent per-sample jitter.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Uniform float in [0, 1) derived from (seed, a, b).
inline double hash_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  const std::uint64_t h = splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b);
  return double(h >> 11) * 0x1.0p-53;
}

/// FNV-1a over a byte string.
std::uint64_t fnv1a64(std::string_view bytes);

LatentImage random_latent(ImageSize size, Rng& rng, float stddev = 1.0f);

}  // namespace ednerf
