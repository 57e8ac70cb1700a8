#include "ednerf/common.hpp"

#include <algorithm>

namespace ednerf {

LatentImage::LatentImage(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 1 || width < 1 || channels < 1) {
    throw InvalidArgument("LatentImage dimensions must be positive");
  }
  data_.assign(std::size_t(height) * width * channels, fill);
}

BinaryMask::BinaryMask(int height, int width, std::uint8_t fill) : height_(height), width_(width) {
  if (height < 1 || width < 1) throw InvalidArgument("BinaryMask dimensions must be positive");
  if (fill > 1) throw InvalidArgument("BinaryMask fill must be 0 or 1");
  data_.assign(std::size_t(height) * width, fill);
}

BinaryMask::BinaryMask(int height, int width, std::vector<std::uint8_t> values)
    : height_(height), width_(width), data_(std::move(values)) {
  if (height < 1 || width < 1) throw InvalidArgument("BinaryMask dimensions must be positive");
  if (data_.size() != std::size_t(height) * width) {
    throw InvalidArgument("BinaryMask value count does not match dimensions");
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (data_[i] > 1) {
      throw InvalidArgument("BinaryMask value at " + std::to_string(i) + " is not binary");
    }
  }
}

std::size_t BinaryMask::count() const {
  return std::size_t(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
}

std::size_t ParameterSet::add(std::string name, ParamGroup group, std::vector<int> shape, float fill) {
  std::size_t n = 1;
  for (int d : shape) n *= std::size_t(d);
  tensors_.push_back(Tensor{std::move(name), group, std::move(shape), std::vector<float>(n, fill)});
  return tensors_.size() - 1;
}

std::size_t ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  throw InvalidArgument("no parameter tensor named '" + name + "'");
}

std::size_t ParameterSet::total_values() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.values.size();
  return n;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  out.tensors_.reserve(tensors_.size());
  for (const auto& t : tensors_) {
    out.tensors_.push_back(Tensor{t.name, t.group, t.shape, std::vector<float>(t.values.size(), 0.0f)});
  }
  return out;
}

void ParameterSet::set_zero() {
  for (auto& t : tensors_) std::fill(t.values.begin(), t.values.end(), 0.0f);
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name != other.tensors_[i].name || tensors_[i].shape != other.tensors_[i].shape) {
      return false;
    }
  }
  return true;
}

void ParameterSet::accumulate(const ParameterSet& other) {
  if (!same_layout(other)) throw InvalidArgument("ParameterSet layouts differ");
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    auto& dst = tensors_[i].values;
    const auto& src = other.tensors_[i].values;
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (!same_layout(other)) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].group != other.tensors_[i].group || tensors_[i].values != other.tensors_[i].values) {
      return false;
    }
  }
  return true;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

LatentImage random_latent(ImageSize size, Rng& rng, float stddev) {
  LatentImage out(size);
  std::normal_distribution<float> normal(0.0f, stddev);
  for (float& v : out.values()) v = normal(rng);
  return out;
}

}  // namespace ednerf
