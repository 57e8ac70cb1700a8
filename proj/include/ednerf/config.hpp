#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "ednerf/field.hpp"
#include "ednerf/guidance.hpp"
#include "ednerf/losses.hpp"
#include "ednerf/refinement.hpp"
#include "ednerf/trainer.hpp"

namespace ednerf {

using json = nlohmann::json;

// Missing keys keep their defaults; unknown keys are rejected.
void to_json(json& j, const Aabb& v);
void from_json(const json& j, Aabb& v);
void to_json(json& j, const FieldConfig& v);
void from_json(const json& j, FieldConfig& v);
void to_json(json& j, const RefinementConfig& v);
void from_json(const json& j, RefinementConfig& v);
void to_json(json& j, const SamplerConfig& v);
void from_json(const json& j, SamplerConfig& v);
void to_json(json& j, const ReconWeights& v);
void from_json(const json& j, ReconWeights& v);
void to_json(json& j, const EditWeights& v);
void from_json(const json& j, EditWeights& v);
void to_json(json& j, const GuidanceConfig& v);
void from_json(const json& j, GuidanceConfig& v);
void to_json(json& j, const ReconTrainConfig& v);
void from_json(const json& j, ReconTrainConfig& v);
void to_json(json& j, const EditTrainConfig& v);
void from_json(const json& j, EditTrainConfig& v);

/// External model: an identifier plus the HTTP endpoint serving it.
struct ClientConfig {
  std::string model;
  std::string endpoint;
  double timeout_seconds = 600.0;
};
void to_json(json& j, const ClientConfig& v);
void from_json(const json& j, ClientConfig& v);

struct PipelineConfig {
  std::string scene_name = "scene";
  std::filesystem::path images_dir;
  std::filesystem::path poses_path;
  std::filesystem::path out_dir = "out";
  int latent_size = kLatentSize;

  ClientConfig codec;
  ClientConfig denoiser;
  ClientConfig segmenter;
  ClientConfig embedder;
  /// Swap every external model for the analytic stand-ins.
  bool toy = false;

  FieldConfig field;
  RefinementConfig refinement;
  ReconTrainConfig recon;
  EditTrainConfig edit;

  std::string source_prompt;
  std::string target_prompt;
  std::string mask_prompt;

  int render_samples = 256;
  int eval_views = 20;
  std::uint64_t seed = 0;

  /// Checks what every command needs (paths exist, sizes consistent).
  void validate() const;
  /// Additionally requires non-empty prompts.
  void validate_for_edit() const;
};
void to_json(json& j, const PipelineConfig& v);
void from_json(const json& j, PipelineConfig& v);

PipelineConfig load_pipeline_config(const std::filesystem::path& path);
void save_pipeline_config(const std::filesystem::path& path, const PipelineConfig& config);

/// Hash of the settings that shape a checkpoint (field, refinement and
/// reconstruction training configs).
std::uint64_t training_config_hash(const PipelineConfig& config);

}  // namespace ednerf
