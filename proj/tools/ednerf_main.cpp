#include <CLI11.hpp>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "ednerf/pipeline.hpp"

using namespace ednerf;

namespace {

enum Exit { kOk = 0, kFailure = 1, kBadArgument = 2, kPrerequisite = 3 };

int report(const std::string& kind, const std::string& message, int code, const json& extra = json::object()) {
  json j = {{"status", "error"}, {"kind", kind}, {"message", message}};
  j.update(extra);
  std::cerr << j.dump() << "\n";
  return code;
}

json metrics_summary(const std::vector<StepMetrics>& history) {
  json j = {{"steps_run", history.size()}};
  if (!history.empty()) {
    const StepMetrics& m = history.back();
    j["last"] = {{"step", m.step}, {"loss_total", m.loss_total}, {"loss_rec", m.loss_rec}, {"loss_ref", m.loss_ref}};
  }
  return j;
}

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  bool toy = false;
  std::string out;
  bool allow_mismatch = false;
};

PipelineConfig effective_config(const Globals& g) {
  if (g.config.empty()) throw InvalidArgument("--config is required for this command");
  PipelineConfig c = load_pipeline_config(g.config);
  if (g.toy) c.toy = true;
  if (!g.out.empty()) c.out_dir = g.out;
  if (g.seed) {
    c.seed = *g.seed;
    c.recon.seed = *g.seed;
    c.edit.seed = *g.seed;
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent radiance field training and text-guided editing"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Pipeline config (JSON)");
  app.add_option("--seed", g.seed, "Overrides every seed in the config");
  app.add_flag("--toy", g.toy, "Use the analytic stand-in models");
  app.add_option("--out", g.out, "Output directory (overrides out_dir)");
  app.add_flag("--allow-config-mismatch", g.allow_mismatch, "Load checkpoints trained under a different config");

  auto* encode = app.add_subcommand("encode", "Encode every view into the latent cache");
  auto* train = app.add_subcommand("train", "Reconstruction training (resumes from recon.ckpt)");
  auto* mask = app.add_subcommand("mask", "Segment the mask prompt in every view");
  auto* edit = app.add_subcommand("edit", "Masked-DDS editing from the reconstruction checkpoint");
  auto* render = app.add_subcommand("render", "Render latent views and decode them");
  RenderRequest req;
  std::string poses;
  render->add_flag("--preview", req.preview, "Linear latent preview instead of the codec decoder");
  render->add_option("--poses", poses, "LLFF pose file to render");
  render->add_option("--spiral", req.spiral, "Number of poses along the training-pose path")->check(CLI::NonNegativeNumber);
  render->add_option("--stage", req.stage, "edit, recon or auto")->check(CLI::IsMember({"auto", "edit", "recon"}));
  auto* eval = app.add_subcommand("eval", "Directional score of the edit");
  auto* toy = app.add_subcommand("toy-scene", "Write a synthetic scene and a toy config");
  std::string toy_dir;
  int toy_views = 3, toy_latent = 16;
  toy->add_option("dir", toy_dir, "Target directory")->required();
  toy->add_option("--views", toy_views)->check(CLI::PositiveNumber);
  toy->add_option("--latent-size", toy_latent)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("usage", e.what(), kBadArgument);
  }

  try {
    json out;
    if (toy->parsed()) {
      make_toy_project(toy_dir, toy_views, toy_latent);
      out = {{"config", (fs::path(toy_dir) / "config.json").string()}, {"views", toy_views}};
      std::cout << out.dump() << "\n";
      return kOk;
    }
    const PipelineConfig c = effective_config(g);
    Clients clients(c);
    if (encode->parsed()) {
      const EncodeReport r = cmd_encode(c, clients);
      out = {{"encoded", r.encoded}, {"cache_hits", r.cache_hits}, {"failures", json::array()}};
      for (const auto& [view, why] : r.failures) out["failures"].push_back({{"view", view}, {"error", why}});
      std::cout << out.dump() << "\n";
      return r.failures.empty() ? kOk : kFailure;
    }
    if (train->parsed()) {
      out = metrics_summary(cmd_train(c, clients, g.allow_mismatch));
    } else if (mask->parsed()) {
      const MaskReport r = cmd_mask(c, clients);
      out = {{"generated", r.generated}, {"cache_hits", r.cache_hits}, {"all_empty", r.all_empty}};
      for (const auto& w : r.warnings) std::cerr << json{{"status", "warning"}, {"message", w}}.dump() << "\n";
    } else if (edit->parsed()) {
      out = metrics_summary(cmd_edit(c, clients, g.allow_mismatch));
    } else if (render->parsed()) {
      req.poses = poses;
      req.allow_mismatch = g.allow_mismatch;
      const RenderResult r = cmd_render(c, clients, req);
      out = {{"stage", r.stage}, {"dir", r.dir.string()}, {"views", r.latents.size()}, {"rays_cast", r.rays_cast}};
    } else if (eval->parsed()) {
      const EvalReport r = cmd_eval(c, clients, g.allow_mismatch);
      out = {{"metric", r.metric}, {"value", r.value}, {"n_views", r.n_views}};
    }
    std::cout << out.dump() << "\n";
    return kOk;
  } catch (const PrerequisiteMissing& e) {
    return report("prerequisite", e.what(), kPrerequisite, {{"run_first", e.command()}});
  } catch (const CheckpointMismatch& e) {
    return report("config_mismatch", e.what(), kBadArgument, {{"override", "--allow-config-mismatch"}});
  } catch (const InvalidArgument& e) {
    return report("invalid_argument", e.what(), kBadArgument);
  } catch (const FormatError& e) {
    return report("format", e.what(), kFailure, {{"location", e.location()}});
  } catch (const IoError& e) {
    return report("io", e.what(), kFailure);
  } catch (const TrainingDiverged& e) {
    return report("diverged", e.what(), kFailure);
  } catch (const std::exception& e) {
    return report("error", e.what(), kFailure);
  }
}
