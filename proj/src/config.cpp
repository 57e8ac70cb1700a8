#include "ednerf/config.hpp"

#include <fstream>
#include <initializer_list>

namespace ednerf {

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
  if (!j.is_object()) throw InvalidArgument(std::string("config: '") + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InvalidArgument(std::string("config: unknown key '") + key + "' in '" + where + "'");
  }
}

template <class T>
void get(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

void get_path(const json& j, const char* key, std::filesystem::path& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<std::string>();
}

}  // namespace

void to_json(json& j, const Aabb& v) {
  j = {{"lo", {v.lo.x(), v.lo.y(), v.lo.z()}}, {"hi", {v.hi.x(), v.hi.y(), v.hi.z()}}};
}

void from_json(const json& j, Aabb& v) {
  check_keys(j, {"lo", "hi"}, "bounds");
  auto vec = [](const json& a) {
    if (!a.is_array() || a.size() != 3) throw InvalidArgument("config: bounds corners need 3 numbers");
    return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
  };
  if (j.contains("lo")) v.lo = vec(j["lo"]);
  if (j.contains("hi")) v.hi = vec(j["hi"]);
}

void to_json(json& j, const FieldConfig& v) {
  j = {{"bounds", v.bounds},
       {"grid_resolution", v.grid_resolution},
       {"density_rank", v.density_rank},
       {"appearance_rank", v.appearance_rank},
       {"appearance_dim", v.appearance_dim},
       {"hidden_width", v.hidden_width},
       {"position_frequencies", v.position_frequencies},
       {"direction_frequencies", v.direction_frequencies},
       {"density_shift", v.density_shift},
       {"init_scale", v.init_scale}};
}

void from_json(const json& j, FieldConfig& v) {
  check_keys(j,
             {"bounds", "grid_resolution", "density_rank", "appearance_rank", "appearance_dim", "hidden_width",
              "position_frequencies", "direction_frequencies", "density_shift", "init_scale"},
             "field");
  get(j, "bounds", v.bounds);
  get(j, "grid_resolution", v.grid_resolution);
  get(j, "density_rank", v.density_rank);
  get(j, "appearance_rank", v.appearance_rank);
  get(j, "appearance_dim", v.appearance_dim);
  get(j, "hidden_width", v.hidden_width);
  get(j, "position_frequencies", v.position_frequencies);
  get(j, "direction_frequencies", v.direction_frequencies);
  get(j, "density_shift", v.density_shift);
  get(j, "init_scale", v.init_scale);
}

void to_json(json& j, const RefinementConfig& v) {
  j = {{"width", v.width},
       {"groups", v.groups},
       {"size", {v.size.height, v.size.width}},
       {"zero_init_output", v.zero_init_output}};
}

void from_json(const json& j, RefinementConfig& v) {
  check_keys(j, {"width", "groups", "size", "zero_init_output"}, "refinement");
  get(j, "width", v.width);
  get(j, "groups", v.groups);
  if (j.contains("size")) {
    const auto& s = j["size"];
    if (!s.is_array() || s.size() != 2) throw InvalidArgument("config: refinement.size needs [height, width]");
    v.size = {s[0].get<int>(), s[1].get<int>()};
  }
  get(j, "zero_init_output", v.zero_init_output);
}

void to_json(json& j, const SamplerConfig& v) { j = {{"n_samples", v.n_samples}, {"stratified", v.stratified}}; }

void from_json(const json& j, SamplerConfig& v) {
  check_keys(j, {"n_samples", "stratified"}, "sampler");
  get(j, "n_samples", v.n_samples);
  get(j, "stratified", v.stratified);
}

void to_json(json& j, const ReconWeights& v) {
  j = {{"lambda_rec", v.lambda_rec}, {"lambda_ref", v.lambda_ref}, {"rec_zero_after", v.rec_zero_after}};
}

void from_json(const json& j, ReconWeights& v) {
  check_keys(j, {"lambda_rec", "lambda_ref", "rec_zero_after"}, "recon weights");
  get(j, "lambda_rec", v.lambda_rec);
  get(j, "lambda_ref", v.lambda_ref);
  get(j, "rec_zero_after", v.rec_zero_after);
}

void to_json(json& j, const EditWeights& v) {
  j = {{"lambda_im", v.lambda_im}, {"lambda_om", v.lambda_om}, {"lambda_dds", v.lambda_dds}};
}

void from_json(const json& j, EditWeights& v) {
  check_keys(j, {"lambda_im", "lambda_om", "lambda_dds"}, "edit weights");
  get(j, "lambda_im", v.lambda_im);
  get(j, "lambda_om", v.lambda_om);
  get(j, "lambda_dds", v.lambda_dds);
}

void to_json(json& j, const GuidanceConfig& v) {
  j = {{"t_min", v.t_min},
       {"t_max", v.t_max},
       {"omega", v.omega == Weighting::constant ? "constant" : "one_minus_alpha_bar"},
       {"cfg_scale", v.cfg_scale}};
}

void from_json(const json& j, GuidanceConfig& v) {
  check_keys(j, {"t_min", "t_max", "omega", "cfg_scale"}, "guidance");
  get(j, "t_min", v.t_min);
  get(j, "t_max", v.t_max);
  get(j, "cfg_scale", v.cfg_scale);
  if (j.contains("omega")) {
    const std::string w = j["omega"];
    if (w == "constant") {
      v.omega = Weighting::constant;
    } else if (w == "one_minus_alpha_bar") {
      v.omega = Weighting::one_minus_alpha_bar;
    } else {
      throw InvalidArgument("config: guidance.omega must be 'constant' or 'one_minus_alpha_bar'");
    }
  }
}

void to_json(json& j, const ReconTrainConfig& v) {
  j = {{"steps", v.steps},
       {"ray_batch", v.ray_batch},
       {"lr_density", v.lr_density},
       {"lr_other", v.lr_other},
       {"lr_network", v.lr_network},
       {"lr_refinement", v.lr_refinement},
       {"lr_final_ratio", v.lr_final_ratio},
       {"weights", v.weights},
       {"sampler", v.sampler},
       {"seed", v.seed},
       {"log_every", v.log_every},
       {"checkpoint_every", v.checkpoint_every}};
}

void from_json(const json& j, ReconTrainConfig& v) {
  check_keys(j,
             {"steps", "ray_batch", "lr_density", "lr_other", "lr_network", "lr_refinement", "lr_final_ratio", "weights", "sampler",
              "seed", "log_every", "checkpoint_every"},
             "recon");
  get(j, "steps", v.steps);
  get(j, "ray_batch", v.ray_batch);
  get(j, "lr_density", v.lr_density);
  get(j, "lr_other", v.lr_other);
  get(j, "lr_network", v.lr_network);
  get(j, "lr_refinement", v.lr_refinement);
  get(j, "lr_final_ratio", v.lr_final_ratio);
  get(j, "weights", v.weights);
  get(j, "sampler", v.sampler);
  get(j, "seed", v.seed);
  get(j, "log_every", v.log_every);
  get(j, "checkpoint_every", v.checkpoint_every);
}

void to_json(json& j, const EditTrainConfig& v) {
  j = {{"steps", v.steps},
       {"guidance", v.guidance},
       {"weights", v.weights},
       {"recon_weights", v.recon_weights},
       {"views_per_step", v.views_per_step},
       {"lr_density", v.lr_density},
       {"lr_other", v.lr_other},
       {"lr_network", v.lr_network},
       {"lr_refinement", v.lr_refinement},
       {"lr_final_ratio", v.lr_final_ratio},
       {"sampler", v.sampler},
       {"seed", v.seed},
       {"log_every", v.log_every},
       {"checkpoint_every", v.checkpoint_every}};
}

void from_json(const json& j, EditTrainConfig& v) {
  check_keys(j,
             {"steps", "guidance", "weights", "recon_weights", "views_per_step", "lr_density", "lr_other",
              "lr_network", "lr_refinement", "lr_final_ratio", "sampler", "seed", "log_every", "checkpoint_every"},
             "edit");
  get(j, "steps", v.steps);
  get(j, "guidance", v.guidance);
  get(j, "weights", v.weights);
  get(j, "recon_weights", v.recon_weights);
  get(j, "views_per_step", v.views_per_step);
  get(j, "lr_density", v.lr_density);
  get(j, "lr_other", v.lr_other);
  get(j, "lr_network", v.lr_network);
  get(j, "lr_refinement", v.lr_refinement);
  get(j, "lr_final_ratio", v.lr_final_ratio);
  get(j, "sampler", v.sampler);
  get(j, "seed", v.seed);
  get(j, "log_every", v.log_every);
  get(j, "checkpoint_every", v.checkpoint_every);
}

void to_json(json& j, const ClientConfig& v) {
  j = {{"model", v.model}, {"endpoint", v.endpoint}, {"timeout_seconds", v.timeout_seconds}};
}

void from_json(const json& j, ClientConfig& v) {
  check_keys(j, {"model", "endpoint", "timeout_seconds"}, "client");
  get(j, "model", v.model);
  get(j, "endpoint", v.endpoint);
  get(j, "timeout_seconds", v.timeout_seconds);
}

void to_json(json& j, const PipelineConfig& v) {
  j = {{"scene_name", v.scene_name},
       {"images_dir", v.images_dir.string()},
       {"poses_path", v.poses_path.string()},
       {"out_dir", v.out_dir.string()},
       {"latent_size", v.latent_size},
       {"codec", v.codec},
       {"denoiser", v.denoiser},
       {"segmenter", v.segmenter},
       {"embedder", v.embedder},
       {"toy", v.toy},
       {"field", v.field},
       {"refinement", v.refinement},
       {"recon", v.recon},
       {"edit", v.edit},
       {"source_prompt", v.source_prompt},
       {"target_prompt", v.target_prompt},
       {"mask_prompt", v.mask_prompt},
       {"render_samples", v.render_samples},
       {"eval_views", v.eval_views},
       {"seed", v.seed}};
}

void from_json(const json& j, PipelineConfig& v) {
  check_keys(j,
             {"scene_name", "images_dir", "poses_path", "out_dir", "latent_size", "codec", "denoiser", "segmenter",
              "embedder", "toy", "field", "refinement", "recon", "edit", "source_prompt", "target_prompt",
              "mask_prompt", "render_samples", "eval_views", "seed"},
             "pipeline");
  get(j, "scene_name", v.scene_name);
  get_path(j, "images_dir", v.images_dir);
  get_path(j, "poses_path", v.poses_path);
  get_path(j, "out_dir", v.out_dir);
  get(j, "latent_size", v.latent_size);
  get(j, "codec", v.codec);
  get(j, "denoiser", v.denoiser);
  get(j, "segmenter", v.segmenter);
  get(j, "embedder", v.embedder);
  get(j, "toy", v.toy);
  get(j, "field", v.field);
  get(j, "refinement", v.refinement);
  get(j, "recon", v.recon);
  get(j, "edit", v.edit);
  get(j, "source_prompt", v.source_prompt);
  get(j, "target_prompt", v.target_prompt);
  get(j, "mask_prompt", v.mask_prompt);
  get(j, "render_samples", v.render_samples);
  get(j, "eval_views", v.eval_views);
  get(j, "seed", v.seed);
}

void PipelineConfig::validate() const {
  if (scene_name.empty()) throw InvalidArgument("config: scene_name is empty");
  if (images_dir.empty() || !std::filesystem::is_directory(images_dir)) {
    throw InvalidArgument("config: images_dir '" + images_dir.string() + "' does not exist");
  }
  if (poses_path.empty() || !std::filesystem::is_regular_file(poses_path)) {
    throw InvalidArgument("config: poses_path '" + poses_path.string() + "' does not exist");
  }
  if (latent_size < 1) throw InvalidArgument("config: latent_size must be positive");
  if (refinement.size != ImageSize{latent_size, latent_size}) {
    throw InvalidArgument("config: refinement.size must equal [latent_size, latent_size]");
  }
  if (render_samples < 1) throw InvalidArgument("config: render_samples must be positive");
  if (eval_views < 1) throw InvalidArgument("config: eval_views must be positive");
  recon.validate();
  edit.validate();
  if (!toy) {
    for (const auto* c : {&codec, &denoiser, &segmenter, &embedder}) {
      if (!c->endpoint.empty() && c->model.empty()) throw InvalidArgument("config: client endpoint without a model id");
    }
  }
}

void PipelineConfig::validate_for_edit() const {
  validate();
  if (source_prompt.empty() || target_prompt.empty()) {
    throw InvalidArgument("config: source_prompt and target_prompt must be set for editing");
  }
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what(), long(e.byte));
  }
  PipelineConfig c;
  try {
    j.get_to(c);
  } catch (const json::exception& e) {
    throw InvalidArgument("config " + path.string() + ": " + e.what());
  }
  return c;
}

void save_pipeline_config(const std::filesystem::path& path, const PipelineConfig& config) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << json(config).dump(2) << "\n";
}

std::uint64_t training_config_hash(const PipelineConfig& config) {
  const json j = {{"field", config.field}, {"refinement", config.refinement}, {"recon", config.recon},
                  {"latent_size", config.latent_size}};
  return fnv1a64(j.dump());
}

}  // namespace ednerf
