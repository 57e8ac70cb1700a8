#include "ednerf/evaluation.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>

namespace ednerf {

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-8 || nb < 1e-8) return 0.0;
  return dot / (na * nb);
}

double directional_score(const std::vector<RgbImage>& source_images, const std::vector<RgbImage>& edited_images,
                         const std::string& source_text, const std::string& target_text, EmbedderClient& embedder) {
  if (source_images.empty()) throw InvalidArgument("directional_score: no image pairs");
  if (source_images.size() != edited_images.size()) throw InvalidArgument("directional_score: unpaired image lists");
  const std::vector<float> ts = embedder.embed_text(source_text);
  const std::vector<float> tt = embedder.embed_text(target_text);
  if (ts.size() != tt.size()) throw Error("embedder returned text vectors of different lengths");
  std::vector<float> dt(ts.size());
  for (std::size_t k = 0; k < dt.size(); ++k) dt[k] = tt[k] - ts[k];
  double total = 0.0;
  for (std::size_t i = 0; i < source_images.size(); ++i) {
    const std::vector<float> a = embedder.embed_image(source_images[i]);
    const std::vector<float> b = embedder.embed_image(edited_images[i]);
    if (a.size() != dt.size() || b.size() != dt.size()) throw Error("embedder returned vectors of inconsistent length");
    std::vector<float> di(a.size());
    for (std::size_t k = 0; k < di.size(); ++k) di[k] = b[k] - a[k];
    total += cosine(di, dt);
  }
  return total / double(source_images.size());
}

double psnr(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("psnr: shape mismatch");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - b[i];
    mse += d * d;
  }
  mse /= double(a.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(mse);
}

double psnr(const RgbImage& a, const RgbImage& b) {
  if (a.height != b.height || a.width != b.width) throw InvalidArgument("psnr: shape mismatch");
  return psnr(std::span<const float>(a.data), std::span<const float>(b.data));
}

std::vector<CameraPose> interpolate_path(const std::vector<CameraPose>& poses, int count) {
  if (poses.empty()) throw InvalidArgument("interpolate_path: no poses");
  if (count < 1) throw InvalidArgument("interpolate_path: count must be >= 1");
  std::vector<CameraPose> out;
  const int segments = int(poses.size()) - 1;
  for (int k = 0; k < count; ++k) {
    if (segments == 0) {
      out.push_back(poses[0]);
      continue;
    }
    const double s = count == 1 ? 0.0 : double(k) * segments / double(count - 1);
    const int i = std::min(int(s), segments - 1);
    const double f = s - i;
    const CameraPose& a = poses[std::size_t(i)];
    const CameraPose& b = poses[std::size_t(i) + 1];
    CameraPose p = a;
    const Eigen::Quaterniond qa(a.rotation), qb(b.rotation);
    p.rotation = qa.slerp(f, qb).normalized().toRotationMatrix();
    p.translation = (1 - f) * a.translation + f * b.translation;
    p.focal_latent = (1 - f) * a.focal_latent + f * b.focal_latent;
    p.principal_point = (1 - f) * a.principal_point + f * b.principal_point;
    p.near = (1 - f) * a.near + f * b.near;
    p.far = (1 - f) * a.far + f * b.far;
    out.push_back(p);
  }
  return out;
}

void write_report(const std::filesystem::path& path, const std::vector<EvalReport>& entries) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& e : entries) {
    nlohmann::json j = {{"metric", e.metric},
                        {"n_views", e.n_views},
                        {"source_prompt", e.source_prompt},
                        {"target_prompt", e.target_prompt}};
    // JSON has no infinity literal.
    if (std::isfinite(e.value)) {
      j["value"] = e.value;
    } else {
      j["value"] = e.value > 0 ? "inf" : "-inf";
    }
    out << j.dump() << "\n";
  }
}

std::vector<EvalReport> read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<EvalReport> out;
  std::string line;
  long row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EvalReport e;
      e.metric = j.at("metric");
      if (j.at("value").is_string()) {
        e.value = j["value"] == "inf" ? std::numeric_limits<double>::infinity()
                                      : -std::numeric_limits<double>::infinity();
      } else {
        e.value = j["value"];
      }
      e.n_views = j.at("n_views");
      e.source_prompt = j.value("source_prompt", "");
      e.target_prompt = j.value("target_prompt", "");
      out.push_back(e);
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("bad report line: ") + ex.what(), row);
    }
    ++row;
  }
  return out;
}

}  // namespace ednerf
