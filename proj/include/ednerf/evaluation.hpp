#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ednerf/common.hpp"
#include "ednerf/field.hpp"

namespace ednerf {

/// Joint image/text embedding model. Both methods return unit vectors.
class EmbedderClient {
 public:
  virtual ~EmbedderClient() = default;
  virtual std::vector<float> embed_image(const RgbImage& image) = 0;
  virtual std::vector<float> embed_text(const std::string& text) = 0;
};

/// Mean over pairs of cos(embed(edit) - embed(src), embed(trg) - embed(src_text)).
/// Pairs whose image direction has norm below 1e-8 contribute 0.
double directional_score(const std::vector<RgbImage>& source_images, const std::vector<RgbImage>& edited_images,
                         const std::string& source_text, const std::string& target_text, EmbedderClient& embedder);

/// Cosine of two equal-length vectors; 0 when either has norm below 1e-8.
double cosine(std::span<const float> a, std::span<const float> b);

/// 10 log10(1 / MSE); +infinity when the inputs are identical.
double psnr(std::span<const float> a, std::span<const float> b);
double psnr(const RgbImage& a, const RgbImage& b);

/// `count` poses evenly spaced along the piecewise path through `poses`
/// (linear centers, slerped rotations, linear intrinsics).
std::vector<CameraPose> interpolate_path(const std::vector<CameraPose>& poses, int count = 20);

struct EvalReport {
  std::string metric;
  double value = 0.0;
  int n_views = 0;
  std::string source_prompt;
  std::string target_prompt;
};

/// One JSON object per line.
void write_report(const std::filesystem::path& path, const std::vector<EvalReport>& entries);
std::vector<EvalReport> read_report(const std::filesystem::path& path);

}  // namespace ednerf
