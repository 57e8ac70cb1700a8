#include "ednerf/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#include "ednerf/remote.hpp"
#include "ednerf/toy.hpp"

namespace ednerf {

void OutputTree::create() const {
  for (const auto& d : {latents(), masks(), checkpoints(), renders(), reports()}) fs::create_directories(d);
}

Clients::Clients(const PipelineConfig& config) : config_(config), schedule_(NoiseSchedule::scaled_linear()) {}
Clients::~Clients() = default;

LatentCodecClient& Clients::codec() {
  if (!codec_) {
    if (config_.toy) {
      codec_ = std::make_unique<ToyLatentCodec>();
    } else {
      codec_ = std::make_unique<RemoteCodec>(config_.codec);
    }
  }
  return *codec_;
}

SegmentationClient& Clients::segmenter() {
  if (!segmenter_) {
    if (config_.toy) {
      segmenter_ = std::make_unique<ToySegmenter>();
    } else {
      segmenter_ = std::make_unique<RemoteSegmenter>(config_.segmenter);
    }
  }
  return *segmenter_;
}

DenoiserClient& Clients::denoiser() {
  if (!denoiser_) {
    if (config_.toy) {
      denoiser_ = std::make_unique<ToyGaussianDenoiser>(
          make_toy_denoiser(schedule_, {{config_.source_prompt}, {config_.target_prompt}}));
    } else {
      denoiser_ = std::make_unique<RemoteDenoiser>(config_.denoiser, config_.edit.guidance.cfg_scale);
    }
  }
  return *denoiser_;
}

EmbedderClient& Clients::embedder() {
  if (!embedder_) {
    if (config_.toy) {
      embedder_ = std::make_unique<ToyEmbedder>();
    } else {
      embedder_ = std::make_unique<RemoteEmbedder>(config_.embedder);
    }
  }
  return *embedder_;
}

std::string Clients::codec_model_id() const { return config_.toy ? "toy-linear-codec" : config_.codec.model; }

SceneDataset open_scene(const PipelineConfig& config) {
  config.validate();
  return load_scene(config.scene_name, config.images_dir, config.poses_path, config.field.bounds, config.latent_size);
}

void attach_latents(SceneDataset& dataset, const OutputTree& out, const std::string& codec_model_id) {
  dataset.latents.assign(dataset.size(), std::nullopt);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const fs::path p = latent_cache_path(out.latents(), dataset.name, i, codec_model_id);
    if (!fs::exists(p)) throw PrerequisiteMissing("latent for view " + std::to_string(i) + " is not cached", "encode");
    dataset.latents[i] = load_latent(p);
    if (dataset.latents[i]->size() != dataset.latent_size) {
      throw FormatError("cached latent " + p.string() + " does not match latent_size");
    }
  }
}

void attach_masks(SceneDataset& dataset, const OutputTree& out, const std::string& mask_prompt) {
  dataset.masks.assign(dataset.size(), std::nullopt);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const fs::path p = mask_cache_path(out.masks(), dataset.name, i, mask_prompt);
    if (!fs::exists(p)) throw PrerequisiteMissing("mask for view " + std::to_string(i) + " is not cached", "mask");
    dataset.masks[i] = read_mask_png(p);
  }
}

TrainState initial_state(const PipelineConfig& config) {
  return TrainState(LatentRadianceField(config.field, config.seed), Refinement(config.refinement, config.seed + 1),
                    config.seed + 2);
}

namespace {

OutputTree tree(const PipelineConfig& config) {
  OutputTree t{config.out_dir};
  t.create();
  save_pipeline_config(config.out_dir / "config.effective.json", config);
  return t;
}

std::ofstream open_log(const fs::path& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open log " + path.string());
  return out;
}

RenderOptions render_options(const PipelineConfig& config) {
  RenderOptions o;
  o.size = {config.latent_size, config.latent_size};
  o.sampler = {config.render_samples, false};
  o.seed = config.seed;
  return o;
}

TrainState load_stage(const PipelineConfig& config, const OutputTree& out, const std::string& stage,
                      bool allow_mismatch, std::string& resolved) {
  const std::uint64_t hash = training_config_hash(config);
  if (stage == "edit" || (stage == "auto" && fs::exists(out.edit_checkpoint()))) {
    if (!fs::exists(out.edit_checkpoint())) throw PrerequisiteMissing("no edit checkpoint", "edit");
    resolved = "edit";
    return load_checkpoint(out.edit_checkpoint(), hash, allow_mismatch);
  }
  if (stage != "recon" && stage != "auto") throw InvalidArgument("unknown render stage '" + stage + "'");
  if (!fs::exists(out.recon_checkpoint())) throw PrerequisiteMissing("no reconstruction checkpoint", "train");
  resolved = "recon";
  return load_checkpoint(out.recon_checkpoint(), hash, allow_mismatch);
}

}  // namespace

EncodeReport cmd_encode(const PipelineConfig& config, Clients& clients) {
  const OutputTree out = tree(config);
  SceneDataset ds = open_scene(config);
  EncodeReport report = encode_views(ds, clients.codec(), out.latents());
  return report;
}

std::vector<StepMetrics> cmd_train(const PipelineConfig& config, Clients& clients, bool allow_mismatch) {
  const OutputTree out = tree(config);
  SceneDataset ds = open_scene(config);
  attach_latents(ds, out, clients.codec_model_id());
  const std::uint64_t hash = training_config_hash(config);
  TrainState state = fs::exists(out.recon_checkpoint())
                         ? load_checkpoint(out.recon_checkpoint(), hash, allow_mismatch)
                         : initial_state(config);
  std::ofstream log = open_log(out.reports() / "recon_metrics.jsonl");
  TrainHooks hooks;
  hooks.metrics = &log;
  hooks.checkpoint_dir = out.checkpoints();
  hooks.config_hash = hash;
  auto history = train_reconstruction(state, ds, config.recon, hooks);
  save_checkpoint(out.recon_checkpoint(), state, hash);
  return history;
}

MaskReport cmd_mask(const PipelineConfig& config, Clients& clients) {
  if (config.mask_prompt.empty()) throw InvalidArgument("config: mask_prompt is empty");
  const OutputTree out = tree(config);
  SceneDataset ds = open_scene(config);
  return generate_masks(ds, clients.segmenter(), config.mask_prompt, out.masks());
}

std::vector<StepMetrics> cmd_edit(const PipelineConfig& config, Clients& clients, bool allow_mismatch) {
  config.validate_for_edit();
  const OutputTree out = tree(config);
  if (!fs::exists(out.recon_checkpoint())) throw PrerequisiteMissing("no reconstruction checkpoint", "train");
  SceneDataset ds = open_scene(config);
  attach_latents(ds, out, clients.codec_model_id());
  attach_masks(ds, out, config.mask_prompt);
  const std::uint64_t hash = training_config_hash(config);
  TrainState state = fs::exists(out.edit_checkpoint()) ? load_checkpoint(out.edit_checkpoint(), hash, allow_mismatch)
                                                       : load_checkpoint(out.recon_checkpoint(), hash, allow_mismatch);
  EditTrainConfig edit = config.edit;
  edit.guidance.source = {config.source_prompt};
  edit.guidance.target = {config.target_prompt};
  std::ofstream log = open_log(out.reports() / "edit_metrics.jsonl");
  TrainHooks hooks;
  hooks.metrics = &log;
  hooks.checkpoint_dir = out.checkpoints();
  hooks.config_hash = hash;
  auto history = train_edit(state, ds, clients.denoiser(), clients.schedule(), edit, hooks);
  save_checkpoint(out.edit_checkpoint(), state, hash);
  return history;
}

RenderResult cmd_render(const PipelineConfig& config, Clients& clients, const RenderRequest& request) {
  const OutputTree out = tree(config);
  RenderResult result;
  const TrainState state = load_stage(config, out, request.stage, request.allow_mismatch, result.stage);
  std::vector<CameraPose> poses;
  if (!request.poses.empty()) {
    poses = load_llff_poses(request.poses, config.latent_size);
  } else {
    poses = open_scene(config).poses();
    if (request.spiral > 0) poses = interpolate_path(poses, request.spiral);
  }
  result.dir = out.renders() / result.stage;
  fs::create_directories(result.dir);
  const RenderOptions opts = render_options(config);
  for (std::size_t k = 0; k < poses.size(); ++k) {
    const RenderedView view = render_view(state.field, poses[k], opts);
    result.rays_cast += view.rays_cast;
    LatentImage refined = state.refinement.forward(view.latent);
    RgbImage image = request.preview ? linear_decode_preview(refined, default_linear_decoder())
                                     : clients.codec().decode(refined);
    char name[64];
    std::snprintf(name, sizeof(name), "%03zu", k);
    const std::string stem = name;
    write_png(result.dir / ((request.preview ? "preview_" : "view_") + stem + ".png"), image);
    write_gray_png(result.dir / ("depth_" + stem + ".png"), view.depth, opts.size, float(poses[k].near),
                   float(poses[k].far));
    save_latent(result.dir / ("latent_" + stem + ".ednl"), refined);
    result.latents.push_back(std::move(refined));
    result.images.push_back(std::move(image));
  }
  return result;
}

EvalReport cmd_eval(const PipelineConfig& config, Clients& clients, bool allow_mismatch) {
  config.validate_for_edit();
  const OutputTree out = tree(config);
  std::string stage;
  const TrainState before = load_stage(config, out, "recon", allow_mismatch, stage);
  const TrainState after = load_stage(config, out, "edit", allow_mismatch, stage);
  const std::vector<CameraPose> path = interpolate_path(open_scene(config).poses(), config.eval_views);
  const RenderOptions opts = render_options(config);
  std::vector<RgbImage> src, edited;
  for (const auto& pose : path) {
    src.push_back(clients.codec().decode(before.refinement.forward(render_view(before.field, pose, opts).latent)));
    edited.push_back(clients.codec().decode(after.refinement.forward(render_view(after.field, pose, opts).latent)));
  }
  EvalReport report{"directional_score",
                    directional_score(src, edited, config.source_prompt, config.target_prompt, clients.embedder()),
                    int(path.size()), config.source_prompt, config.target_prompt};
  write_report(out.reports() / "eval.jsonl", {report});
  return report;
}

PipelineConfig make_toy_project(const fs::path& dir, int views, int latent_size) {
  ToySceneSpec spec;
  spec.views = views;
  spec.latent_size = latent_size;
  spec.image_size = 8 * latent_size;
  write_toy_scene(dir / "scene", spec);

  PipelineConfig c;
  c.scene_name = "toy";
  c.images_dir = dir / "scene" / "images";
  c.poses_path = dir / "scene" / "poses_bounds.npy";
  c.out_dir = dir / "out";
  c.latent_size = latent_size;
  c.toy = true;
  c.codec.model = "toy-linear-codec";
  c.denoiser.model = "toy-gaussian";
  c.segmenter.model = "toy-color-segmenter";
  c.embedder.model = "toy-color-embedder";
  c.field.grid_resolution = 32;
  c.field.density_rank = 4;
  c.field.appearance_rank = 4;
  c.field.appearance_dim = 8;
  c.field.hidden_width = 16;
  c.refinement.width = 8;
  c.refinement.groups = 4;
  c.refinement.size = {latent_size, latent_size};
  c.recon.steps = 150;
  c.recon.ray_batch = 512;
  c.recon.sampler = {32, true};
  c.recon.weights.rec_zero_after = 100;
  c.recon.log_every = 10;
  c.recon.checkpoint_every = 50;
  c.edit.steps = 60;
  c.edit.sampler = {32, true};
  c.edit.lr_network = 1e-2;
  c.edit.lr_final_ratio = 0.1;
  c.edit.log_every = 10;
  c.edit.checkpoint_every = 0;
  c.source_prompt = "a red cube";
  c.target_prompt = "a blue cube";
  c.mask_prompt = "red";
  c.render_samples = 32;
  c.eval_views = 4;
  save_pipeline_config(dir / "config.json", c);
  return c;
}

}  // namespace ednerf
