#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ednerf/config.hpp"
#include "ednerf/evaluation.hpp"
#include "ednerf/guidance.hpp"
#include "ednerf/scene_io.hpp"
#include "ednerf/trainer.hpp"

namespace ednerf {

/// An upstream artifact is missing; `command` names the verb that makes it.
class PrerequisiteMissing : public Error {
 public:
  PrerequisiteMissing(const std::string& what, std::string command)
      : Error(what + "; run '" + command + "' first"), command_(std::move(command)) {}
  const std::string& command() const { return command_; }

 private:
  std::string command_;
};

/// out/{latents,masks,checkpoints,renders,reports}
struct OutputTree {
  fs::path root;
  fs::path latents() const { return root / "latents"; }
  fs::path masks() const { return root / "masks"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path renders() const { return root / "renders"; }
  fs::path reports() const { return root / "reports"; }
  fs::path recon_checkpoint() const { return checkpoints() / "recon.ckpt"; }
  fs::path edit_checkpoint() const { return checkpoints() / "edit.ckpt"; }
  void create() const;
};

/// External models built on first use from the config (toy or remote).
class Clients {
 public:
  explicit Clients(const PipelineConfig& config);
  ~Clients();
  LatentCodecClient& codec();
  SegmentationClient& segmenter();
  DenoiserClient& denoiser();
  EmbedderClient& embedder();
  const NoiseSchedule& schedule() const { return schedule_; }
  std::string codec_model_id() const;

 private:
  const PipelineConfig& config_;
  NoiseSchedule schedule_;
  std::unique_ptr<LatentCodecClient> codec_;
  std::unique_ptr<SegmentationClient> segmenter_;
  std::unique_ptr<DenoiserClient> denoiser_;
  std::unique_ptr<EmbedderClient> embedder_;
};

/// Images + poses; no latents or masks attached.
SceneDataset open_scene(const PipelineConfig& config);
/// Attaches cached latents; throws PrerequisiteMissing("encode") if any is absent.
void attach_latents(SceneDataset& dataset, const OutputTree& out, const std::string& codec_model_id);
/// Attaches cached masks; throws PrerequisiteMissing("mask") if any is absent.
void attach_masks(SceneDataset& dataset, const OutputTree& out, const std::string& mask_prompt);

/// Fresh field + refinement seeded from the config.
TrainState initial_state(const PipelineConfig& config);

EncodeReport cmd_encode(const PipelineConfig& config, Clients& clients);
/// Trains (or resumes) to recon.steps; returns the final step metrics.
std::vector<StepMetrics> cmd_train(const PipelineConfig& config, Clients& clients, bool allow_mismatch = false);
MaskReport cmd_mask(const PipelineConfig& config, Clients& clients);
std::vector<StepMetrics> cmd_edit(const PipelineConfig& config, Clients& clients, bool allow_mismatch = false);

struct RenderRequest {
  /// "edit", "recon", or "auto" (edit if available).
  std::string stage = "auto";
  /// LLFF pose file; empty renders the training poses.
  fs::path poses;
  /// When > 0, that many poses along the training-pose path instead.
  int spiral = 0;
  bool preview = false;
  bool allow_mismatch = false;
};

struct RenderResult {
  std::string stage;
  fs::path dir;
  std::vector<LatentImage> latents;
  std::vector<RgbImage> images;
  std::size_t rays_cast = 0;
};

RenderResult cmd_render(const PipelineConfig& config, Clients& clients, const RenderRequest& request);

/// Directional score of edited vs reconstructed renders over eval_views path poses.
EvalReport cmd_eval(const PipelineConfig& config, Clients& clients, bool allow_mismatch = false);

/// Writes a synthetic toy scene plus a small toy-mode config under `dir`
/// and returns that config.
PipelineConfig make_toy_project(const fs::path& dir, int views, int latent_size);

}  // namespace ednerf
