#pragma once

// Analytic stand-ins for the external models, plus a small synthetic scene.
// They let the whole pipeline run offline and give closed-form expectations.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ednerf/evaluation.hpp"
#include "ednerf/field.hpp"
#include "ednerf/guidance.hpp"
#include "ednerf/scene_io.hpp"

namespace ednerf {

using Rgb = std::array<float, 3>;

/// First color word in `text` ("a red cube" -> red), if any.
std::optional<Rgb> color_in_text(const std::string& text);

/// Minimum-norm latent whose default linear decode is `rgb`.
Latent4 latent_for_color(const Rgb& rgb);

/// 8x box average followed by the pseudo-inverse of the default linear
/// decoder; decoding is the linear decoder upsampled 8x.
class ToyLatentCodec : public LatentCodecClient {
 public:
  LatentImage encode(const RgbImage& image) override;
  RgbImage decode(const LatentImage& latent) override;
  std::string model_id() const override { return "toy-linear-codec"; }
  std::size_t encode_calls() const { return encode_calls_; }

 private:
  std::size_t encode_calls_ = 0;
};

/// Selects pixels within `tolerance` (max channel difference) of the color
/// named in the prompt. Prompts without a color word give an empty mask.
class ToySegmenter : public SegmentationClient {
 public:
  explicit ToySegmenter(float tolerance = 0.2f) : tolerance_(tolerance) {}
  BinaryMask segment(const RgbImage& image, const std::string& prompt) override;
  std::string model_id() const override { return "toy-color-segmenter"; }

 private:
  float tolerance_;
};

/// Embeds mean image color, or the color named in a text, as the unit vector
/// along (r - 0.5, g - 0.5, b - 0.5, 0.5).
class ToyEmbedder : public EmbedderClient {
 public:
  std::vector<float> embed_image(const RgbImage& image) override;
  std::vector<float> embed_text(const std::string& text) override;
};

/// Gaussian denoiser whose per-prompt mean is latent_for_color of the color
/// named in each prompt.
ToyGaussianDenoiser make_toy_denoiser(const NoiseSchedule& schedule, const std::vector<Prompt>& prompts);

// ---------------------------------------------------------------------------
// Synthetic scene: a cube at the origin in front of a backdrop slab, seen by
// cameras on an arc at negative z looking toward +z.

struct ToySceneSpec {
  int views = 3;
  int image_size = kImageSize;
  int latent_size = kLatentSize;
  double cube_half = 0.4;
  double backdrop_z0 = 1.0;
  double backdrop_z1 = 1.3;
  double radius = 3.2;
  double spread_degrees = 20.0;
  double near = 1.5;
  double far = 5.0;
  /// focal / image width
  double focal_ratio = 1.4;
  Rgb cube_color{0.85f, 0.15f, 0.15f};
  Rgb backdrop_color{0.45f, 0.5f, 0.55f};
};

/// Cameras at latent resolution.
std::vector<CameraPose> toy_poses(const ToySceneSpec& spec);

/// Analytic ray cast at `size`; `pose` is given at latent resolution.
RgbImage render_toy_image(const ToySceneSpec& spec, const CameraPose& pose, int size);

/// Pixels whose center ray hits the cube.
BinaryMask toy_cube_mask(const ToySceneSpec& spec, const CameraPose& pose, ImageSize size);

/// Writes images/NNN.png and poses_bounds.npy under `dir`.
void write_toy_scene(const fs::path& dir, const ToySceneSpec& spec);

/// Field whose density and appearance reproduce the toy scene exactly
/// (up to grid interpolation), with the given latent colors.
/// Needs density_rank >= 3, appearance_rank >= 2, appearance_dim >= 2, hidden_width >= 2.
LatentRadianceField make_toy_field(const FieldConfig& config, const ToySceneSpec& spec, const Latent4& cube,
                                   const Latent4& backdrop);

/// A dataset whose latents are renders of `field` (a perfect reconstruction)
/// with the cube as the mask in every view.
SceneDataset make_toy_latent_scene(const LatentRadianceField& field, const ToySceneSpec& spec,
                                   const RenderOptions& options);

}  // namespace ednerf
