#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ednerf/field.hpp"
#include "ednerf/losses.hpp"
#include "ednerf/optim.hpp"
#include "ednerf/refinement.hpp"
#include "ednerf/scene_io.hpp"

namespace ednerf {

struct ReconTrainConfig {
  long steps = 100000;
  int ray_batch = 4096;
  double lr_density = 0.04;
  double lr_other = 0.02;
  /// Appearance basis and decode head.
  double lr_network = 1e-3;
  double lr_refinement = 1e-3;
  /// Learning rates decay exponentially to this fraction at the last step.
  double lr_final_ratio = 0.1;
  ReconWeights weights{};
  SamplerConfig sampler{256, true};
  std::uint64_t seed = 0;
  long log_every = 100;
  long checkpoint_every = 10000;

  void validate() const;
  GroupRates rates() const { return {lr_density, lr_other, lr_network}; }
  GroupRates refinement_rates() const { return {0.0, 0.0, lr_refinement}; }
};

struct EditTrainConfig {
  long steps = 5000;
  GuidanceConfig guidance{};
  EditWeights weights{};
  ReconWeights recon_weights{};
  int views_per_step = 1;
  double lr_density = 0.04;
  double lr_other = 0.02;
  double lr_network = 1e-3;
  double lr_refinement = 1e-3;
  double lr_final_ratio = 1.0;
  SamplerConfig sampler{256, true};
  std::uint64_t seed = 0;
  long log_every = 100;
  long checkpoint_every = 1000;

  void validate() const;
  GroupRates rates() const { return {lr_density, lr_other, lr_network}; }
  GroupRates refinement_rates() const { return {0.0, 0.0, lr_refinement}; }
};

/// Everything needed to continue training bit-exactly.
struct TrainState {
  LatentRadianceField field;
  Refinement refinement;
  Adam field_opt;
  Adam refine_opt;
  long recon_step = 0;
  long edit_step = 0;
  Rng rng;

  TrainState(LatentRadianceField f, Refinement r, std::uint64_t seed);
  /// Fresh optimizer moments (used when switching from reconstruction to editing).
  void reset_optimizers();
};

struct RayBatch {
  std::vector<Ray> rays;
  std::vector<float> targets;  // 4 per ray
  std::vector<int> views;
  std::vector<int> pixels;
};

/// Uniform over (view, pixel) pairs of the encoded views.
RayBatch sample_ray_batch(const SceneDataset& dataset, int batch_size, Rng& rng);

struct StepMetrics {
  long step = 0;
  double loss_rec = 0.0;
  double loss_ref = 0.0;
  double loss_total = 0.0;
  double dds_norm = 0.0;
  int view = -1;
  int t = 0;
};

/// Raised when a loss turns non-finite. The message carries the step, the
/// loss components and, when a checkpoint directory is set, the dump path.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

struct TrainHooks {
  /// Metrics lines (one JSON object per line) are appended here.
  std::ostream* metrics = nullptr;
  /// Periodic checkpoints and the divergence dump go here when non-empty.
  fs::path checkpoint_dir;
  std::uint64_t config_hash = 0;
  /// Stop once the phase counter reaches this value (<0: run to the configured end).
  long stop_at = -1;
  std::function<void(const StepMetrics&)> on_step;
};

/// Optimizes field and refinement on the encoded latents until
/// state.recon_step == config.steps (or hooks.stop_at).
std::vector<StepMetrics> train_reconstruction(TrainState& state, const SceneDataset& dataset,
                                              const ReconTrainConfig& config, const TrainHooks& hooks = {});

/// Masked-DDS editing. Source latents are read, never written. Throws if any
/// view lacks a mask. The reconstruction-loss schedule continues from
/// state.recon_step.
std::vector<StepMetrics> train_edit(TrainState& state, const SceneDataset& dataset, DenoiserClient& denoiser,
                                    const NoiseSchedule& schedule, const EditTrainConfig& config,
                                    const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Checkpoints: "EDNC", u16 version, u64 config hash, counters, RNG state,
// field/refinement configs (JSON), then parameters and Adam moments.

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointMismatch : public Error {
 public:
  using Error::Error;
};

void save_checkpoint(const fs::path& path, const TrainState& state, std::uint64_t config_hash);

struct CheckpointInfo {
  std::uint16_t version = 0;
  std::uint64_t config_hash = 0;
  long recon_step = 0;
  long edit_step = 0;
};

CheckpointInfo inspect_checkpoint(const fs::path& path);

/// Throws CheckpointMismatch when `expected_hash` differs from the stored
/// hash unless `allow_mismatch` is set (then a warning goes to stderr).
TrainState load_checkpoint(const fs::path& path, std::uint64_t expected_hash, bool allow_mismatch = false);

}  // namespace ednerf
