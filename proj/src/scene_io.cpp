#include "ednerf/scene_io.hpp"

#include <png.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace ednerf {

namespace {

constexpr char kLatentMagic[4] = {'E', 'D', 'N', 'L'};
constexpr std::size_t kLatentHeaderBytes = 4 + 2 + 3 * 4;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

LatentHeader parse_latent_header(const std::string& bytes, const fs::path& path) {
  if (bytes.size() < kLatentHeaderBytes) throw FormatError("truncated latent header in " + path.string(), 0);
  if (std::memcmp(bytes.data(), kLatentMagic, 4) != 0) throw FormatError("bad latent magic in " + path.string(), 0);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  LatentHeader h;
  h.version = std::uint16_t(p[4] | (p[5] << 8));
  if (h.version != kLatentFileVersion) {
    throw FormatError("unsupported latent file version " + std::to_string(h.version) + " in " + path.string(), 4);
  }
  h.height = get_u32(p + 6);
  h.width = get_u32(p + 10);
  h.channels = get_u32(p + 14);
  if (h.height == 0 || h.width == 0 || h.channels == 0 || h.height > 65536 || h.width > 65536 || h.channels > 4096) {
    throw FormatError("implausible latent dimensions in " + path.string(), 6);
  }
  return h;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_');
  return out;
}

}  // namespace

void save_latent(const fs::path& path, const LatentImage& latent) {
  std::string bytes(kLatentMagic, 4);
  put_u16(bytes, kLatentFileVersion);
  put_u32(bytes, std::uint32_t(latent.height()));
  put_u32(bytes, std::uint32_t(latent.width()));
  put_u32(bytes, std::uint32_t(latent.channels()));
  bytes.reserve(bytes.size() + latent.numel() * 4);
  for (float v : latent.values()) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(bytes, u);
  }
  write_file_atomic(path, bytes);
}

LatentHeader inspect_latent(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string head(kLatentHeaderBytes, '\0');
  in.read(head.data(), std::streamsize(head.size()));
  head.resize(std::size_t(in.gcount()));
  return parse_latent_header(head, path);
}

LatentImage load_latent(const fs::path& path) {
  const std::string bytes = read_file(path);
  const LatentHeader h = parse_latent_header(bytes, path);
  const std::size_t count = std::size_t(h.height) * h.width * h.channels;
  if (bytes.size() != kLatentHeaderBytes + count * 4) {
    throw FormatError("latent payload size mismatch in " + path.string() + ": expected " +
                          std::to_string(count * 4) + " bytes, found " + std::to_string(bytes.size() - kLatentHeaderBytes),
                      long(kLatentHeaderBytes));
  }
  LatentImage out(int(h.height), int(h.width), int(h.channels));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + kLatentHeaderBytes;
  auto dst = out.values();
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t u = get_u32(p + 4 * i);
    std::memcpy(&dst[i], &u, 4);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG via the libpng simplified API.

namespace {

std::vector<std::uint8_t> read_png_raw(const fs::path& path, std::uint32_t format, int& h, int& w) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  h = int(image.height);
  w = int(image.width);
  return buf;
}

void write_png_raw(const fs::path& path, std::uint32_t format, int h, int w, const std::vector<std::uint8_t>& buf) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = std::uint32_t(w);
  image.height = std::uint32_t(h);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

std::uint8_t to_byte(float v) { return std::uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

}  // namespace

RgbImage read_png(const fs::path& path) {
  int h = 0, w = 0;
  const auto buf = read_png_raw(path, PNG_FORMAT_RGB, h, w);
  RgbImage img(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i] / 255.0f;
  return img;
}

void write_png(const fs::path& path, const RgbImage& image) {
  std::vector<std::uint8_t> buf(image.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(image.data[i]);
  write_png_raw(path, PNG_FORMAT_RGB, image.height, image.width, buf);
}

void write_mask_png(const fs::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> buf(mask.values().begin(), mask.values().end());
  for (auto& b : buf) b = b ? 255 : 0;
  write_png_raw(path, PNG_FORMAT_GRAY, mask.height(), mask.width(), buf);
}

BinaryMask read_mask_png(const fs::path& path) {
  int h = 0, w = 0;
  auto buf = read_png_raw(path, PNG_FORMAT_GRAY, h, w);
  for (auto& b : buf) b = b ? 1 : 0;
  return BinaryMask(h, w, std::move(buf));
}

void write_gray_png(const fs::path& path, std::span<const float> values, ImageSize size, float lo, float hi) {
  if (values.size() != std::size_t(size.pixels())) throw InvalidArgument("write_gray_png: size mismatch");
  const float range = hi > lo ? hi - lo : 1.0f;
  std::vector<std::uint8_t> buf(values.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte((values[i] - lo) / range);
  write_png_raw(path, PNG_FORMAT_GRAY, size.height, size.width, buf);
}

RgbImage upsample_nearest(const RgbImage& image, int factor) {
  RgbImage out(image.height * factor, image.width * factor);
  for (int i = 0; i < out.height; ++i)
    for (int j = 0; j < out.width; ++j)
      for (int c = 0; c < 3; ++c) out.at(i, j, c) = image.at(i / factor, j / factor, c);
  return out;
}

// ---------------------------------------------------------------------------
// Poses

namespace {

std::vector<PoseRow> parse_npy(const std::string& bytes, const fs::path& path) {
  if (bytes.size() < 10 || std::memcmp(bytes.data(), "\x93NUMPY", 6) != 0) {
    throw FormatError("not a numpy file: " + path.string(), 0);
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const int major = p[6];
  std::size_t header_len = 0, offset = 0;
  if (major == 1) {
    header_len = std::size_t(p[8] | (p[9] << 8));
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw FormatError("truncated numpy header in " + path.string(), 8);
    header_len = get_u32(p + 8);
    offset = 12;
  } else {
    throw FormatError("unsupported numpy format version in " + path.string(), 6);
  }
  if (bytes.size() < offset + header_len) throw FormatError("truncated numpy header in " + path.string(), long(offset));
  const std::string header = bytes.substr(offset, header_len);
  if (header.find("'<f8'") == std::string::npos) throw FormatError("numpy pose file must be little-endian float64");
  if (header.find("'fortran_order': True") != std::string::npos) {
    throw FormatError("numpy pose file must be C-ordered");
  }
  const auto shape_at = header.find("'shape':");
  const auto open = header.find('(', shape_at);
  const auto close = header.find(')', open);
  if (shape_at == std::string::npos || open == std::string::npos || close == std::string::npos) {
    throw FormatError("numpy header has no shape in " + path.string());
  }
  std::vector<long> dims;
  std::stringstream ss(header.substr(open + 1, close - open - 1));
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.find_first_not_of(" ") == std::string::npos) continue;
    dims.push_back(std::stol(tok));
  }
  const std::size_t data_at = offset + header_len;
  const std::size_t values = (bytes.size() - data_at) / 8;
  if (dims.size() == 1 && dims[0] == 0) dims = {0, 17};
  if (dims.size() != 2) throw FormatError("numpy pose array must be 2-D in " + path.string());
  if (dims[1] != 17) throw FormatError("pose row has " + std::to_string(dims[1]) + " values, expected 17", 0);
  if (values != std::size_t(dims[0]) * 17) throw FormatError("numpy payload size mismatch in " + path.string());
  std::vector<PoseRow> rows(static_cast<std::size_t>(dims[0]));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t k = 0; k < 17; ++k) {
      const unsigned char* q = p + data_at + (r * 17 + k) * 8;
      std::uint64_t u = 0;
      for (int b = 0; b < 8; ++b) u |= std::uint64_t(q[b]) << (8 * b);
      std::memcpy(&rows[r][k], &u, 8);
    }
  }
  return rows;
}

std::vector<PoseRow> parse_text_rows(const std::string& text) {
  std::vector<PoseRow> rows;
  std::istringstream lines(text);
  std::string line;
  long row_index = 0;
  while (std::getline(lines, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::replace(line.begin(), line.end(), ',', ' ');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream tokens(line);
    std::vector<double> values;
    std::string tok;
    while (tokens >> tok) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') {
        throw FormatError("pose row " + std::to_string(row_index) + " has a non-numeric value '" + tok + "'", row_index);
      }
      values.push_back(v);
    }
    if (values.size() != 17) {
      throw FormatError("pose row " + std::to_string(row_index) + " has " + std::to_string(values.size()) +
                            " values, expected 17",
                        row_index);
    }
    PoseRow row;
    std::copy(values.begin(), values.end(), row.begin());
    rows.push_back(row);
    ++row_index;
  }
  return rows;
}

}  // namespace

std::vector<PoseRow> read_pose_rows(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (path.extension() == ".npy") return parse_npy(bytes, path);
  return parse_text_rows(bytes);
}

void write_pose_rows(const fs::path& path, const std::vector<PoseRow>& rows) {
  std::string out;
  if (path.extension() == ".npy") {
    std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" + std::to_string(rows.size()) + ", 17), }";
    const std::size_t unpadded = 10 + header.size() + 1;
    header.append((64 - unpadded % 64) % 64, ' ');
    header.push_back('\n');
    out = std::string("\x93NUMPY\x01\x00", 8);
    put_u16(out, std::uint16_t(header.size()));
    out += header;
    for (const auto& row : rows) {
      for (double v : row) {
        std::uint64_t u;
        std::memcpy(&u, &v, 8);
        for (int b = 0; b < 8; ++b) out.push_back(char((u >> (8 * b)) & 0xff));
      }
    }
  } else {
    char buf[32];
    for (const auto& row : rows) {
      for (std::size_t k = 0; k < row.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g", row[k]);
        out += buf;
        out += k + 1 < row.size() ? ' ' : '\n';
      }
    }
  }
  write_file_atomic(path, out);
}

CameraPose pose_from_llff_row(const PoseRow& row, int latent_resolution) {
  for (std::size_t k = 0; k < row.size(); ++k) {
    if (!std::isfinite(row[k])) throw FormatError("non-finite value in pose row", long(k));
  }
  // Row-major 3x5: element (r, c) at index r * 5 + c.
  Mat3 llff;
  Vec3 t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) llff(r, c) = row[std::size_t(r * 5 + c)];
    t[r] = row[std::size_t(r * 5 + 3)];
  }
  const double height = row[4], width = row[9], focal = row[14];
  if (!(height > 0.0 && width > 0.0 && focal > 0.0)) throw FormatError("pose intrinsics must be positive");
  // (down, right, back) -> (right, down, forward)
  Mat3 r;
  r.col(0) = llff.col(1);
  r.col(1) = llff.col(0);
  r.col(2) = -llff.col(2);
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 ortho = svd.matrixU() * svd.matrixV().transpose();
  if (ortho.determinant() < 0.0) throw FormatError("pose rotation is a reflection");
  const double scale = height / latent_resolution;
  CameraPose pose;
  pose.rotation = ortho;
  pose.translation = t;
  pose.focal_latent = focal / scale;
  pose.principal_point = {width / scale / 2.0, height / scale / 2.0};
  pose.near = row[15];
  pose.far = row[16];
  pose.validate();
  return pose;
}

PoseRow llff_row_from_pose(const CameraPose& pose, int image_size, int latent_resolution) {
  Mat3 llff;
  llff.col(0) = pose.rotation.col(1);
  llff.col(1) = pose.rotation.col(0);
  llff.col(2) = -pose.rotation.col(2);
  const double scale = double(image_size) / latent_resolution;
  PoseRow row{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) row[std::size_t(r * 5 + c)] = llff(r, c);
    row[std::size_t(r * 5 + 3)] = pose.translation[r];
  }
  row[4] = image_size;
  row[9] = image_size;
  row[14] = pose.focal_latent * scale;
  row[15] = pose.near;
  row[16] = pose.far;
  return row;
}

std::vector<CameraPose> load_llff_poses(const fs::path& path, int latent_resolution) {
  const std::vector<PoseRow> rows = read_pose_rows(path);
  if (rows.empty()) throw FormatError("pose file " + path.string() + " contains no poses (empty dataset)");
  std::vector<CameraPose> poses;
  poses.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    try {
      poses.push_back(pose_from_llff_row(rows[i], latent_resolution));
    } catch (const Error& e) {
      throw FormatError("pose row " + std::to_string(i) + ": " + e.what(), long(i));
    }
  }
  return poses;
}

// ---------------------------------------------------------------------------
// Dataset

bool SceneDataset::encoded() const {
  return latents.size() == views.size() &&
         std::all_of(latents.begin(), latents.end(), [](const auto& l) { return l.has_value(); });
}

std::vector<CameraPose> SceneDataset::poses() const {
  std::vector<CameraPose> out;
  for (const auto& v : views) out.push_back(v.pose);
  return out;
}

SceneDataset load_scene(const std::string& name, const fs::path& images_dir, const fs::path& poses_path,
                        const Aabb& bounds, int latent_resolution) {
  const std::vector<CameraPose> poses = load_llff_poses(poses_path, latent_resolution);
  if (!fs::is_directory(images_dir)) throw IoError("image directory not found: " + images_dir.string());
  std::vector<fs::path> images;
  for (const auto& entry : fs::directory_iterator(images_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") images.push_back(entry.path());
  }
  std::sort(images.begin(), images.end());
  if (images.size() != poses.size()) {
    throw FormatError("scene has " + std::to_string(images.size()) + " images but " + std::to_string(poses.size()) +
                      " poses");
  }
  SceneDataset ds;
  ds.name = name;
  ds.bounds = bounds;
  ds.latent_size = {latent_resolution, latent_resolution};
  for (std::size_t i = 0; i < poses.size(); ++i) ds.views.push_back({images[i], poses[i]});
  ds.latents.resize(poses.size());
  ds.masks.resize(poses.size());
  return ds;
}

fs::path latent_cache_path(const fs::path& cache_dir, const std::string& scene, std::size_t view,
                           const std::string& model_id) {
  char idx[16];
  std::snprintf(idx, sizeof(idx), "%04zu", view);
  return cache_dir / (sanitize(scene) + "__v" + idx + "__" + sanitize(model_id) + ".ednl");
}

fs::path mask_cache_path(const fs::path& mask_dir, const std::string& scene, std::size_t view,
                         const std::string& prompt) {
  char idx[16];
  std::snprintf(idx, sizeof(idx), "%04zu", view);
  char tag[24];
  std::snprintf(tag, sizeof(tag), "%016llx", static_cast<unsigned long long>(fnv1a64(prompt)));
  return mask_dir / (sanitize(scene) + "__v" + idx + "__" + tag + ".png");
}

EncodeReport encode_views(SceneDataset& dataset, LatentCodecClient& codec, const fs::path& cache_dir) {
  EncodeReport report;
  dataset.latents.resize(dataset.size());
  const std::string model = codec.model_id();
  fs::create_directories(cache_dir);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const fs::path cached = latent_cache_path(cache_dir, dataset.name, i, model);
    try {
      if (fs::exists(cached)) {
        LatentImage z = load_latent(cached);
        if (z.size() != dataset.latent_size || z.channels() != kLatentChannels) {
          throw FormatError("cached latent " + cached.string() + " has the wrong shape");
        }
        dataset.latents[i] = std::move(z);
        ++report.cache_hits;
        continue;
      }
      LatentImage z = codec.encode(dataset.load_image(i));
      if (z.size() != dataset.latent_size || z.channels() != kLatentChannels) {
        throw Error("codec returned a " + std::to_string(z.height()) + "x" + std::to_string(z.width()) + "x" +
                    std::to_string(z.channels()) + " latent");
      }
      save_latent(cached, z);
      dataset.latents[i] = std::move(z);
      ++report.encoded;
    } catch (const std::exception& e) {
      report.failures.emplace_back(i, e.what());
    }
  }
  nlohmann::json manifest = {{"scene", dataset.name},
                             {"model_id", model},
                             {"scaling_factor", codec.scaling_factor()},
                             {"views", dataset.size()}};
  write_file_atomic(cache_dir / (sanitize(dataset.name) + "__" + sanitize(model) + ".manifest.json"),
                    manifest.dump(2) + "\n");
  return report;
}

BinaryMask downsample_mask(const BinaryMask& full, ImageSize out) {
  if (out.height < 1 || out.width < 1) throw InvalidArgument("downsample_mask: output size must be positive");
  const double sy = double(full.height()) / out.height, sx = double(full.width()) / out.width;
  BinaryMask result(out.height, out.width);
  for (int i = 0; i < out.height; ++i) {
    const double y0 = i * sy, y1 = (i + 1) * sy;
    for (int j = 0; j < out.width; ++j) {
      const double x0 = j * sx, x1 = (j + 1) * sx;
      double covered = 0.0;
      for (int y = int(std::floor(y0)); y < int(std::ceil(y1)) && y < full.height(); ++y) {
        const double wy = std::min(y1, y + 1.0) - std::max(y0, double(y));
        for (int x = int(std::floor(x0)); x < int(std::ceil(x1)) && x < full.width(); ++x) {
          if (!full.at(y, x)) continue;
          covered += wy * (std::min(x1, x + 1.0) - std::max(x0, double(x)));
        }
      }
      result.set(i, j, covered / (sy * sx) >= 0.5);
    }
  }
  return result;
}

MaskReport generate_masks(SceneDataset& dataset, SegmentationClient& segmenter, const std::string& prompt,
                          const fs::path& mask_dir) {
  MaskReport report;
  dataset.masks.resize(dataset.size());
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const fs::path cached = mask_dir.empty() ? fs::path() : mask_cache_path(mask_dir, dataset.name, i, prompt);
    BinaryMask mask;
    if (!cached.empty() && fs::exists(cached)) {
      mask = read_mask_png(cached);
      ++report.cache_hits;
    } else {
      const BinaryMask full = segmenter.segment(dataset.load_image(i), prompt);
      mask = downsample_mask(full, dataset.latent_size);
      if (!cached.empty()) {
        fs::path tmp = cached;
        tmp += ".tmp.png";
        write_mask_png(tmp, mask);
        fs::rename(tmp, cached);
      }
      ++report.generated;
    }
    if (mask.count() > 0) ++nonzero;
    dataset.masks[i] = std::move(mask);
  }
  if (nonzero == 0 && dataset.size() > 0) {
    report.all_empty = true;
    report.warnings.push_back("mask prompt '" + prompt + "' selected no pixels in any view; editing would be a no-op");
    std::cerr << "warning: " << report.warnings.back() << "\n";
  }
  return report;
}

LinearDecoder default_linear_decoder() {
  LinearDecoder m;
  m << 0.298f, 0.187f, -0.158f, -0.184f,  //
      0.207f, 0.286f, 0.189f, -0.271f,    //
      0.208f, 0.173f, 0.264f, -0.473f;
  return m;
}

RgbImage linear_decode_preview(const LatentImage& latent, const LinearDecoder& matrix) {
  if (latent.channels() != kLatentChannels) throw InvalidArgument("linear_decode_preview expects 4 channels");
  if (!matrix.allFinite()) throw InvalidArgument("linear_decode_preview: matrix is not finite");
  RgbImage out(latent.height(), latent.width());
  const int n = latent.size().pixels();
  for (int p = 0; p < n; ++p) {
    auto z = latent.pixel(p);
    for (int c = 0; c < 3; ++c) {
      float s = 0.0f;
      for (int k = 0; k < kLatentChannels; ++k) s += matrix(c, k) * z[k];
      out.data[std::size_t(p) * 3 + c] = std::clamp(s, 0.0f, 1.0f);
    }
  }
  return out;
}

}  // namespace ednerf
