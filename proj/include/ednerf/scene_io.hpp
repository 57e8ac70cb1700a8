#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ednerf/common.hpp"
#include "ednerf/field.hpp"

namespace ednerf {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Latent files: "EDNL", u16 version = 1, u32 H, u32 W, u32 C, then H*W*C
// little-endian float32, row-major, channel-last.

inline constexpr std::uint16_t kLatentFileVersion = 1;

struct LatentHeader {
  std::uint16_t version = kLatentFileVersion;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
};

/// Writes via a temporary file and rename.
void save_latent(const fs::path& path, const LatentImage& latent);
LatentImage load_latent(const fs::path& path);
/// Reads only the header.
LatentHeader inspect_latent(const fs::path& path);

// ---------------------------------------------------------------------------
// Images

RgbImage read_png(const fs::path& path);
void write_png(const fs::path& path, const RgbImage& image);
/// 8-bit single channel, 0 / 255.
void write_mask_png(const fs::path& path, const BinaryMask& mask);
/// Any nonzero pixel reads as 1.
BinaryMask read_mask_png(const fs::path& path);
/// Writes values linearly mapped from [lo, hi] to 8-bit gray.
void write_gray_png(const fs::path& path, std::span<const float> values, ImageSize size, float lo, float hi);

/// Replicates each pixel into a factor x factor block.
RgbImage upsample_nearest(const RgbImage& image, int factor);

// ---------------------------------------------------------------------------
// Camera poses in the LLFF poses_bounds layout: N rows of 17 float64, a
// row-major 3x5 matrix [R | t | (H, W, focal)] followed by (near, far).
// R's columns are the camera's (down, right, backwards) axes.

using PoseRow = std::array<double, 17>;

/// `.npy` files are parsed as numpy arrays (float64, C order, shape (N, 17));
/// anything else is read as whitespace- or comma-separated text.
std::vector<PoseRow> read_pose_rows(const fs::path& path);
/// Format chosen by extension as in read_pose_rows.
void write_pose_rows(const fs::path& path, const std::vector<PoseRow>& rows);

/// Converts one row to a latent-resolution camera: the rotation is
/// re-orthonormalized and the intrinsics are divided by (H / latent_resolution).
CameraPose pose_from_llff_row(const PoseRow& row, int latent_resolution = kLatentSize);
/// Inverse of pose_from_llff_row for a camera whose image is image_size pixels square.
PoseRow llff_row_from_pose(const CameraPose& pose, int image_size, int latent_resolution = kLatentSize);

/// Throws FormatError (with the row index) on malformed rows and on an empty file.
std::vector<CameraPose> load_llff_poses(const fs::path& path, int latent_resolution = kLatentSize);

// ---------------------------------------------------------------------------
// External model clients

class LatentCodecClient {
 public:
  virtual ~LatentCodecClient() = default;
  /// 512x512x3 image in [0,1] -> scaled 64x64x4 latent.
  virtual LatentImage encode(const RgbImage& image) = 0;
  virtual RgbImage decode(const LatentImage& latent) = 0;
  virtual std::string model_id() const = 0;
  /// Latent scaling factor the client applied before returning.
  virtual double scaling_factor() const { return 1.0; }
};

class SegmentationClient {
 public:
  virtual ~SegmentationClient() = default;
  /// Full-resolution binary mask for the region named by `prompt`.
  virtual BinaryMask segment(const RgbImage& image, const std::string& prompt) = 0;
  virtual std::string model_id() const = 0;
};

// ---------------------------------------------------------------------------
// Dataset

struct SceneView {
  fs::path image_path;
  CameraPose pose;
};

struct SceneDataset {
  std::string name;
  Aabb bounds;
  ImageSize latent_size{};
  std::vector<SceneView> views;
  std::vector<std::optional<LatentImage>> latents;
  std::vector<std::optional<BinaryMask>> masks;

  std::size_t size() const { return views.size(); }
  RgbImage load_image(std::size_t view) const { return read_png(views.at(view).image_path); }
  bool encoded() const;
  std::vector<CameraPose> poses() const;
};

/// Images are the sorted `.png` files of `images_dir`; their count must match
/// the pose rows.
SceneDataset load_scene(const std::string& name, const fs::path& images_dir, const fs::path& poses_path,
                        const Aabb& bounds, int latent_resolution = kLatentSize);

/// Cache file for (scene, view, model id).
fs::path latent_cache_path(const fs::path& cache_dir, const std::string& scene, std::size_t view,
                           const std::string& model_id);
fs::path mask_cache_path(const fs::path& mask_dir, const std::string& scene, std::size_t view,
                         const std::string& prompt);

struct EncodeReport {
  std::size_t encoded = 0;
  std::size_t cache_hits = 0;
  std::vector<std::pair<std::size_t, std::string>> failures;
};

/// Fills dataset.latents, reading cached latents when present and encoding
/// (then caching) the rest. A codec failure on one view is recorded and the
/// remaining views proceed.
EncodeReport encode_views(SceneDataset& dataset, LatentCodecClient& codec, const fs::path& cache_dir);

/// Area-average to `out` then threshold at 0.5.
BinaryMask downsample_mask(const BinaryMask& full, ImageSize out);

struct MaskReport {
  std::size_t generated = 0;
  std::size_t cache_hits = 0;
  bool all_empty = false;
  std::vector<std::string> warnings;
};

/// Segments every view with `prompt`, downsamples to the latent size and
/// stores the masks in dataset.masks (and under `mask_dir` when non-empty).
MaskReport generate_masks(SceneDataset& dataset, SegmentationClient& segmenter, const std::string& prompt,
                          const fs::path& mask_dir = {});

using LinearDecoder = Eigen::Matrix<float, 3, 4>;

/// Commonly used linear approximation of the latent-diffusion VAE decoder.
LinearDecoder default_linear_decoder();

/// Per-pixel matrix * latent, clipped to [0, 1].
RgbImage linear_decode_preview(const LatentImage& latent, const LinearDecoder& matrix);

}  // namespace ednerf
