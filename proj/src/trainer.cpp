#include "ednerf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include "ednerf/config.hpp"

namespace ednerf {

void ReconTrainConfig::validate() const {
  if (steps < 0) throw InvalidArgument("recon: steps must be >= 0");
  if (ray_batch < 1) throw InvalidArgument("recon: ray_batch must be >= 1");
  if (!(lr_density >= 0.0 && lr_other >= 0.0 && lr_network >= 0.0 && lr_refinement >= 0.0)) {
    throw InvalidArgument("recon: learning rates must be >= 0");
  }
  if (!(lr_final_ratio > 0.0)) throw InvalidArgument("recon: lr_final_ratio must be > 0");
  if (sampler.n_samples < 1) throw InvalidArgument("recon: sampler needs at least one sample");
  weights.validate();
}

void EditTrainConfig::validate() const {
  if (steps < 1) throw InvalidArgument("edit: steps must be > 0");
  if (views_per_step < 1) throw InvalidArgument("edit: views_per_step must be >= 1");
  if (!(lr_density >= 0.0 && lr_other >= 0.0 && lr_network >= 0.0 && lr_refinement >= 0.0)) {
    throw InvalidArgument("edit: learning rates must be >= 0");
  }
  if (!(lr_final_ratio > 0.0)) throw InvalidArgument("edit: lr_final_ratio must be > 0");
  if (sampler.n_samples < 1) throw InvalidArgument("edit: sampler needs at least one sample");
  weights.validate();
  recon_weights.validate();
}

TrainState::TrainState(LatentRadianceField f, Refinement r, std::uint64_t seed)
    : field(std::move(f)),
      refinement(std::move(r)),
      field_opt(field.parameters()),
      refine_opt(refinement.parameters()),
      rng(seed) {}

void TrainState::reset_optimizers() {
  field_opt = Adam(field.parameters());
  refine_opt = Adam(refinement.parameters());
}

namespace {

void require_encoded(const SceneDataset& dataset) {
  if (dataset.size() == 0) throw InvalidArgument("dataset has no views");
  if (!dataset.encoded()) throw InvalidArgument("dataset latents are not encoded; run the encode command first");
  for (const auto& z : dataset.latents) {
    if (z->size() != dataset.latent_size) throw InvalidArgument("dataset latent has the wrong size");
  }
}

std::uint64_t step_seed(std::uint64_t seed, long step, std::uint64_t stream) {
  return splitmix64(splitmix64(seed ^ splitmix64(std::uint64_t(step))) ^ stream);
}

double unix_time() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

void log_metrics(std::ostream* out, const char* phase, const StepMetrics& m) {
  if (!out) return;
  json j = {{"phase", phase},   {"step", m.step},         {"loss_rec", m.loss_rec}, {"loss_ref", m.loss_ref},
            {"loss_total", m.loss_total}, {"dds_norm", m.dds_norm}, {"view", m.view}, {"t", m.t},
            {"time", unix_time()}};
  *out << j.dump() << "\n";
  out->flush();
}

fs::path checkpoint_name(const fs::path& dir, const char* phase, long step) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%08ld.ckpt", phase, step);
  return dir / buf;
}

[[noreturn]] void diverged(const TrainState& state, const TrainHooks& hooks, const char* phase,
                           const StepMetrics& m) {
  std::ostringstream msg;
  msg << phase << " loss became non-finite at step " << m.step << " (loss_rec=" << m.loss_rec
      << ", loss_ref=" << m.loss_ref << ", loss_total=" << m.loss_total << ", dds_norm=" << m.dds_norm
      << ", view=" << m.view << ", t=" << m.t << ")";
  if (!hooks.checkpoint_dir.empty()) {
    const fs::path dump = hooks.checkpoint_dir / "diverged.ckpt";
    try {
      save_checkpoint(dump, state, hooks.config_hash);
      msg << "; state dumped to " << dump.string();
    } catch (const std::exception& e) {
      msg << "; state dump failed: " << e.what();
    }
  }
  throw TrainingDiverged(msg.str());
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

double l2(std::span<const float> v) {
  double s = 0.0;
  for (float x : v) s += double(x) * x;
  return std::sqrt(s);
}

}  // namespace

RayBatch sample_ray_batch(const SceneDataset& dataset, int batch_size, Rng& rng) {
  require_encoded(dataset);
  if (batch_size < 1) throw InvalidArgument("sample_ray_batch: batch size must be >= 1");
  const ImageSize size = dataset.latent_size;
  std::uniform_int_distribution<int> pick_view(0, int(dataset.size()) - 1);
  std::uniform_int_distribution<int> pick_pixel(0, size.pixels() - 1);
  RayBatch b;
  b.rays.reserve(batch_size);
  b.targets.reserve(std::size_t(batch_size) * kLatentChannels);
  for (int k = 0; k < batch_size; ++k) {
    const int v = pick_view(rng);
    const int p = pick_pixel(rng);
    b.views.push_back(v);
    b.pixels.push_back(p);
    b.rays.push_back(pixel_ray(dataset.views[v].pose, p / size.width, p % size.width));
    for (float x : dataset.latents[v]->pixel(p)) b.targets.push_back(x);
  }
  return b;
}

std::vector<StepMetrics> train_reconstruction(TrainState& state, const SceneDataset& dataset,
                                              const ReconTrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  require_encoded(dataset);
  if (state.refinement.config().size != dataset.latent_size) {
    throw InvalidArgument("refinement size does not match the dataset latent size");
  }
  const long end = hooks.stop_at >= 0 ? std::min(hooks.stop_at, config.steps) : config.steps;
  ParameterSet field_grads = state.field.parameters().zeros_like();
  ParameterSet refine_grads = state.refinement.parameters().zeros_like();
  std::uniform_int_distribution<int> pick_view(0, int(dataset.size()) - 1);
  std::vector<StepMetrics> history;
  RefinementTape tape;

  while (state.recon_step < end) {
    const long step = state.recon_step;
    const double decay = decay_factor(step, config.steps, config.lr_final_ratio);
    const GroupRates rates = config.rates().scaled(decay);
    field_grads.set_zero();
    refine_grads.set_zero();
    const double lrec = config.weights.rec_at(step);
    const double lref = config.weights.lambda_ref;
    StepMetrics m;
    m.step = step;

    // Ray-batch reconstruction of the raw renders.
    const RayBatch batch = sample_ray_batch(dataset, config.ray_batch, state.rng);
    const std::uint64_t ray_seed = step_seed(config.seed, step, 1);
    if (lrec > 0.0) {
      const auto px = render_rays(state.field, batch.rays, config.sampler, ray_seed);
      std::vector<float> rendered(batch.targets.size()), grad(batch.targets.size(), 0.0f);
      for (std::size_t k = 0; k < px.size(); ++k)
        for (int c = 0; c < kLatentChannels; ++c) rendered[k * kLatentChannels + c] = px[k].latent[c];
      m.loss_rec = squared_error(rendered, batch.targets, grad, lrec);
      render_rays_backward(state.field, batch.rays, config.sampler, ray_seed, grad, field_grads);
    }

    // Full-view refinement pass.
    const int v = pick_view(state.rng);
    m.view = v;
    if (lref > 0.0) {
      RenderOptions opts;
      opts.size = dataset.latent_size;
      opts.sampler = config.sampler;
      opts.seed = step_seed(config.seed, step, 2);
      const RenderedView view = render_view(state.field, dataset.views[v].pose, opts);
      if (!all_finite(view.latent.values())) {
        m.loss_ref = std::numeric_limits<double>::quiet_NaN();
        m.loss_total = m.loss_ref;
        diverged(state, hooks, "recon", m);
      }
      const LatentImage refined = state.refinement.forward(view.latent, &tape);
      LatentImage grad_refined(refined.size(), refined.channels());
      m.loss_ref = squared_error(refined.values(), dataset.latents[v]->values(), grad_refined.values(), lref);
      const LatentImage grad_in = state.refinement.backward(tape, grad_refined, refine_grads);
      render_view_backward(state.field, dataset.views[v].pose, opts, grad_in, field_grads);
    }
    m.loss_total = lrec * m.loss_rec + lref * m.loss_ref;
    if (!std::isfinite(m.loss_total)) diverged(state, hooks, "recon", m);

    state.field_opt.step(state.field.parameters(), field_grads, rates);
    state.refine_opt.step(state.refinement.parameters(), refine_grads, config.refinement_rates().scaled(decay));
    ++state.recon_step;

    history.push_back(m);
    if (hooks.on_step) hooks.on_step(m);
    if (config.log_every > 0 && (step % config.log_every == 0 || state.recon_step == end)) {
      log_metrics(hooks.metrics, "recon", m);
    }
    if (!hooks.checkpoint_dir.empty() && config.checkpoint_every > 0 && state.recon_step % config.checkpoint_every == 0) {
      save_checkpoint(checkpoint_name(hooks.checkpoint_dir, "recon", state.recon_step), state, hooks.config_hash);
    }
  }
  return history;
}

std::vector<StepMetrics> train_edit(TrainState& state, const SceneDataset& dataset, DenoiserClient& denoiser,
                                    const NoiseSchedule& schedule, const EditTrainConfig& config,
                                    const TrainHooks& hooks) {
  config.validate();
  config.guidance.validate(schedule);
  require_encoded(dataset);
  if (dataset.masks.size() != dataset.size()) {
    throw InvalidArgument("edit: dataset has no masks; run the mask command first");
  }
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (!dataset.masks[i]) throw InvalidArgument("edit: view " + std::to_string(i) + " has no mask");
    if (dataset.masks[i]->size() != dataset.latent_size) {
      throw InvalidArgument("edit: mask of view " + std::to_string(i) + " does not match the latent size");
    }
  }
  if (state.refinement.config().size != dataset.latent_size) {
    throw InvalidArgument("refinement size does not match the dataset latent size");
  }
  if (state.edit_step == 0) state.reset_optimizers();

  const long end = hooks.stop_at >= 0 ? std::min(hooks.stop_at, config.steps) : config.steps;
  ParameterSet field_grads = state.field.parameters().zeros_like();
  ParameterSet refine_grads = state.refinement.parameters().zeros_like();
  std::uniform_int_distribution<int> pick_view(0, int(dataset.size()) - 1);
  std::vector<StepMetrics> history;
  RefinementTape tape;

  while (state.edit_step < end) {
    const long step = state.edit_step;
    const double decay = decay_factor(step, config.steps, config.lr_final_ratio);
    const GroupRates rates = config.rates().scaled(decay);
    field_grads.set_zero();
    refine_grads.set_zero();
    StepMetrics m;
    m.step = step;

    for (int k = 0; k < config.views_per_step; ++k) {
      const int v = pick_view(state.rng);
      RenderOptions opts;
      opts.size = dataset.latent_size;
      opts.sampler = config.sampler;
      opts.seed = step_seed(config.seed, step, 16 + std::uint64_t(k));
      const CameraPose& pose = dataset.views[v].pose;
      const RenderedView view = render_view(state.field, pose, opts);
      if (!all_finite(view.latent.values())) {
        m.view = v;
        m.loss_total = std::numeric_limits<double>::quiet_NaN();
        diverged(state, hooks, "edit", m);
      }
      const LatentImage refined = state.refinement.forward(view.latent, &tape);

      // One shared (t, eps) draw for both DDS branches.
      const int t = sample_timestep(config.guidance, state.rng);
      const LatentImage eps = sample_noise(dataset.latent_size, state.rng);
      const EditInputs in{view.latent,
                          refined,
                          *dataset.latents[v],
                          v,
                          v,
                          *dataset.masks[v],
                          config.guidance.source,
                          config.guidance.target,
                          t,
                          eps,
                          omega(config.guidance, schedule, t),
                          config.weights,
                          config.recon_weights,
                          state.recon_step + step};
      const EditObjective obj = edit_objective(denoiser, schedule, in);

      LatentImage grad_in = state.refinement.backward(tape, obj.grad_refined, refine_grads);
      auto gi = grad_in.values();
      auto gr = obj.grad_rendered.values();
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += gr[i];
      render_view_backward(state.field, pose, opts, grad_in, field_grads);

      m.view = v;
      m.t = t;
      m.loss_total += obj.loss_mrec;
      m.dds_norm += l2(obj.masked_dds.values());
    }
    m.loss_rec = m.loss_total;
    if (!std::isfinite(m.loss_total) || !std::isfinite(m.dds_norm)) diverged(state, hooks, "edit", m);

    state.field_opt.step(state.field.parameters(), field_grads, rates);
    state.refine_opt.step(state.refinement.parameters(), refine_grads, config.refinement_rates().scaled(decay));
    ++state.edit_step;

    history.push_back(m);
    if (hooks.on_step) hooks.on_step(m);
    if (config.log_every > 0 && (step % config.log_every == 0 || state.edit_step == end)) {
      log_metrics(hooks.metrics, "edit", m);
    }
    if (!hooks.checkpoint_dir.empty() && config.checkpoint_every > 0 && state.edit_step % config.checkpoint_every == 0) {
      save_checkpoint(checkpoint_name(hooks.checkpoint_dir, "edit", state.edit_step), state, hooks.config_hash);
    }
  }
  return history;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'E', 'D', 'N', 'C'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(char((std::uint64_t(v) >> (8 * i)) & 0xff));
  }
  void str(const std::string& s) {
    le<std::uint32_t>(std::uint32_t(s.size()));
    buf_ += s;
  }
  void params(const ParameterSet& p) {
    le<std::uint32_t>(std::uint32_t(p.size()));
    for (const Tensor& t : p) {
      str(t.name);
      le<std::uint8_t>(std::uint8_t(t.group));
      le<std::uint32_t>(std::uint32_t(t.shape.size()));
      for (int d : t.shape) le<std::uint32_t>(std::uint32_t(d));
      le<std::uint64_t>(t.values.size());
      for (float v : t.values) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        le<std::uint32_t>(u);
      }
    }
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, fs::path path) : data_(std::move(data)), path_(std::move(path)) {}
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) throw FormatError("truncated checkpoint " + path_.string(), long(pos_));
  }
  template <class T>
  T le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return T(v);
  }
  std::string str() {
    const std::uint32_t n = le<std::uint32_t>();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  ParameterSet params() {
    ParameterSet p;
    const std::uint32_t count = le<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::string name = str();
      const auto group = le<std::uint8_t>();
      if (group > 2) throw FormatError("bad parameter group in checkpoint " + path_.string(), long(pos_));
      const std::uint32_t ndim = le<std::uint32_t>();
      if (ndim > 8) throw FormatError("bad tensor rank in checkpoint " + path_.string(), long(pos_));
      std::vector<int> shape(ndim);
      std::size_t expect = 1;
      for (auto& d : shape) {
        d = int(le<std::uint32_t>());
        expect *= std::size_t(d);
      }
      const std::uint64_t n = le<std::uint64_t>();
      if (n != expect) throw FormatError("tensor size does not match its shape in " + path_.string(), long(pos_));
      need(n * 4);
      const std::size_t k = p.add(name, ParamGroup(group), shape);
      auto& values = p[k].values;
      for (std::uint64_t j = 0; j < n; ++j) {
        const std::uint32_t u = le<std::uint32_t>();
        std::memcpy(&values[j], &u, 4);
      }
    }
    return p;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  fs::path path_;
  std::size_t pos_ = 0;
};

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CheckpointInfo read_header(Reader& r, const fs::path& path) {
  r.need(4);
  char magic[4];
  for (char& c : magic) c = char(r.le<std::uint8_t>());
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint: " + path.string(), 0);
  CheckpointInfo info;
  info.version = r.le<std::uint16_t>();
  if (info.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(info.version) + " in " + path.string() +
                          " (expected " + std::to_string(kCheckpointVersion) + ")",
                      4);
  }
  info.config_hash = r.le<std::uint64_t>();
  info.recon_step = long(r.le<std::int64_t>());
  info.edit_step = long(r.le<std::int64_t>());
  return info;
}

}  // namespace

void save_checkpoint(const fs::path& path, const TrainState& state, std::uint64_t config_hash) {
  Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.le<std::uint16_t>(kCheckpointVersion);
  w.le<std::uint64_t>(config_hash);
  w.le<std::int64_t>(state.recon_step);
  w.le<std::int64_t>(state.edit_step);
  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  w.str(json(state.field.config()).dump());
  w.str(json(state.refinement.config()).dump());
  w.params(state.field.parameters());
  w.params(state.field_opt.first_moment());
  w.params(state.field_opt.second_moment());
  w.le<std::int64_t>(state.field_opt.steps());
  w.params(state.refinement.parameters());
  w.params(state.refine_opt.first_moment());
  w.params(state.refine_opt.second_moment());
  w.le<std::int64_t>(state.refine_opt.steps());

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(w.data().data(), std::streamsize(w.data().size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointInfo inspect_checkpoint(const fs::path& path) {
  Reader r(read_all(path), path);
  return read_header(r, path);
}

TrainState load_checkpoint(const fs::path& path, std::uint64_t expected_hash, bool allow_mismatch) {
  Reader r(read_all(path), path);
  const CheckpointInfo info = read_header(r, path);
  if (info.config_hash != expected_hash) {
    std::ostringstream msg;
    msg << "checkpoint " << path.string() << " was written with config hash " << std::hex << info.config_hash
        << " but the current config hashes to " << expected_hash;
    if (!allow_mismatch) throw CheckpointMismatch(msg.str() + "; pass the override flag to load it anyway");
    std::cerr << "warning: " << msg.str() << "\n";
  }
  const std::string rng_state = r.str();
  FieldConfig fc;
  RefinementConfig rc;
  try {
    json::parse(r.str()).get_to(fc);
    json::parse(r.str()).get_to(rc);
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad config block in checkpoint: ") + e.what(), long(r.pos()));
  }
  ParameterSet fp = r.params();
  ParameterSet fm = r.params();
  ParameterSet fv = r.params();
  const long ft = long(r.le<std::int64_t>());
  ParameterSet rp = r.params();
  ParameterSet rm = r.params();
  ParameterSet rv = r.params();
  const long rt = long(r.le<std::int64_t>());
  if (!r.done()) throw FormatError("trailing bytes in checkpoint " + path.string(), long(r.pos()));

  TrainState state(LatentRadianceField(fc, std::move(fp)), Refinement(rc, std::move(rp)), 0);
  state.field_opt.restore(ft, std::move(fm), std::move(fv));
  state.refine_opt.restore(rt, std::move(rm), std::move(rv));
  state.recon_step = info.recon_step;
  state.edit_step = info.edit_step;
  std::istringstream rs(rng_state);
  rs >> state.rng;
  if (rs.fail()) throw FormatError("bad RNG state in checkpoint " + path.string());
  return state;
}

}  // namespace ednerf
