#include "muviecast/dataset.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <regex>
#include <set>
#include <sstream>

#include "muviecast/error.hpp"
#include "muviecast/image.hpp"

namespace muvie {
namespace fs = std::filesystem;

Eigen::Vector3d Camera::project(const Eigen::Vector3d& world) const {
  const Eigen::Vector3d cam = rotation() * world + translation();
  const Eigen::Vector3d p = intrinsics * cam;
  return {p.x() / p.z(), p.y() / p.z(), cam.z()};
}

Eigen::Vector3d Camera::unproject(double u, double v, double depth) const {
  const Eigen::Vector3d cam = depth * (intrinsics.inverse() * Eigen::Vector3d(u, v, 1.0));
  return rotation().transpose() * (cam - translation());
}

void validate_camera(const Camera& cam, const std::string& what) {
  const auto& k = cam.intrinsics;
  if (!k.allFinite() || !cam.extrinsics.allFinite())
    throw ValidationError(what + ": non-finite camera matrix");
  if (k(2, 2) != 1.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0)
    throw ValidationError(what + ": intrinsics last row must be [0 0 1]");
  if (!(k(0, 0) > 0.0) || !(k(1, 1) > 0.0))
    throw ValidationError(what + ": focal lengths must be positive");
  if (std::abs(k.determinant()) < 1e-12) throw ValidationError(what + ": singular intrinsics");
  const Eigen::Matrix3d r = cam.rotation();
  if ((r * r.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-4)
    throw ValidationError(what + ": extrinsic rotation is not orthonormal");
  const Eigen::RowVector4d last = cam.extrinsics.row(3);
  if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9)
    throw ValidationError(what + ": extrinsics last row must be [0 0 0 1]");
  if (!(cam.depth_min > 0.0)) throw ValidationError(what + ": depth_min must be > 0");
  if (!(cam.depth_interval > 0.0)) throw ValidationError(what + ": depth_interval must be > 0");
  if (cam.num_depth < 1) throw ValidationError(what + ": num_depth must be >= 1");
}

namespace {

std::vector<std::string> content_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) lines.push_back(line);
  }
  return lines;
}

template <int R, int C>
Eigen::Matrix<double, R, C> parse_rows(const std::vector<std::string>& lines, std::size_t first,
                                       const std::string& path) {
  Eigen::Matrix<double, R, C> m;
  for (int r = 0; r < R; ++r) {
    if (first + r >= lines.size()) throw LoadError(path + ": truncated camera file");
    std::istringstream row(lines[first + r]);
    for (int c = 0; c < C; ++c)
      if (!(row >> m(r, c))) throw LoadError(path + ": malformed matrix row");
  }
  return m;
}

std::string index_name(int id) {
  std::ostringstream os;
  os << std::setw(8) << std::setfill('0') << id;
  return os.str();
}

}  // namespace

Camera read_camera(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open camera file " + path.string());
  const auto lines = content_lines(in);
  auto find = [&](const std::string& tag) {
    for (std::size_t i = 0; i < lines.size(); ++i)
      if (lines[i].find(tag) != std::string::npos) return i;
    throw LoadError(path.string() + ": missing '" + tag + "' section");
  };
  Camera cam;
  cam.extrinsics = parse_rows<4, 4>(lines, find("extrinsic") + 1, path.string());
  const std::size_t ki = find("intrinsic");
  cam.intrinsics = parse_rows<3, 3>(lines, ki + 1, path.string());
  if (ki + 4 >= lines.size()) throw LoadError(path.string() + ": missing depth range line");
  std::istringstream range(lines[ki + 4]);
  if (!(range >> cam.depth_min >> cam.depth_interval))
    throw LoadError(path.string() + ": malformed depth range line");
  double num = 0.0;
  if (range >> num) cam.num_depth = static_cast<int>(std::lround(num));
  return cam;
}

void write_camera(const fs::path& path, const Camera& cam) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write camera file " + path.string());
  out << std::setprecision(17);
  out << "extrinsic\n";
  for (int r = 0; r < 4; ++r)
    out << cam.extrinsics(r, 0) << ' ' << cam.extrinsics(r, 1) << ' ' << cam.extrinsics(r, 2)
        << ' ' << cam.extrinsics(r, 3) << '\n';
  out << "\nintrinsic\n";
  for (int r = 0; r < 3; ++r)
    out << cam.intrinsics(r, 0) << ' ' << cam.intrinsics(r, 1) << ' ' << cam.intrinsics(r, 2)
        << '\n';
  out << '\n' << cam.depth_min << ' ' << cam.depth_interval << ' ' << cam.num_depth << '\n';
}

void validate_scene(const Scene& scene) {
  if (scene.images.size() < 2) throw ValidationError("scene '" + scene.id + "': need >= 2 views");
  if (scene.images.size() != scene.cameras.size())
    throw ValidationError("scene '" + scene.id + "': image/camera count mismatch");
  const Shape& shape = scene.images[0].shape();
  for (std::size_t i = 0; i < scene.images.size(); ++i) {
    if (scene.images[i].shape() != shape || shape.size() != 3 || shape[0] != 3)
      throw ValidationError("scene '" + scene.id + "': view " + std::to_string(i) +
                            " has shape " + shape_str(scene.images[i].shape()) +
                            ", expected " + shape_str(shape));
    validate_camera(scene.cameras[i], "view " + std::to_string(i));
  }
}

Scene load_scene(const fs::path& root) {
  const fs::path image_dir = root / "images";
  const fs::path cam_dir = root / "cams";
  if (!fs::is_directory(image_dir)) throw LoadError(root.string() + ": missing images/ directory");
  static const std::regex kIndexed(R"((\d+))");
  Scene scene;
  scene.id = fs::absolute(root).lexically_normal().filename().string();
  if (scene.id.empty()) scene.id = fs::absolute(root).lexically_normal().parent_path().filename().string();
  for (const auto& path : list_images(image_dir)) {
    const std::string stem = path.stem().string();
    if (!std::regex_match(stem, kIndexed)) continue;
    const int id = std::stoi(stem);
    const fs::path cam_path = cam_dir / (stem + "_cam.txt");
    if (!fs::exists(cam_path))
      throw LoadError("missing camera file for view " + stem + " (" + cam_path.string() + ")");
    scene.images.push_back(read_image(path));
    scene.cameras.push_back(read_camera(cam_path));
    scene.view_ids.push_back(id);
  }
  validate_scene(scene);
  return scene;
}

void write_scene(const fs::path& root, const Scene& scene) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "cams");
  for (int i = 0; i < scene.size(); ++i) {
    const int id = scene.view_ids.empty() ? i : scene.view_ids[i];
    write_image(root / "images" / (index_name(id) + ".png"), scene.images[i]);
    write_camera(root / "cams" / (index_name(id) + "_cam.txt"), scene.cameras[i]);
  }
}

PairList read_pair_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open pair file " + path.string());
  int n = 0;
  if (!(in >> n) || n < 0) throw LoadError(path.string() + ": malformed view count");
  PairList pairs;
  for (int v = 0; v < n; ++v) {
    int id = 0, k = 0;
    if (!(in >> id >> k)) throw LoadError(path.string() + ": truncated pair file");
    std::vector<int> ranked(k);
    for (int j = 0; j < k; ++j) {
      double score;
      if (!(in >> ranked[j] >> score)) throw LoadError(path.string() + ": truncated pair file");
    }
    pairs[id] = std::move(ranked);
  }
  return pairs;
}

void write_pair_file(const fs::path& path, const PairList& pairs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write pair file " + path.string());
  out << pairs.size() << '\n';
  for (const auto& [id, ranked] : pairs) {
    out << id << '\n' << ranked.size();
    for (std::size_t j = 0; j < ranked.size(); ++j) out << ' ' << ranked[j] << ' ' << ranked.size() - j;
    out << '\n';
  }
}

std::vector<int> select_neighbors(const Scene& scene, int ref_index, int window,
                                  const PairList* pairs) {
  const int n = scene.size();
  if (ref_index < 0 || ref_index >= n)
    throw ValidationError("reference index " + std::to_string(ref_index) + " out of range");
  if (window < 2 || window > n)
    throw ValidationError("window " + std::to_string(window) + " must lie in [2, " +
                          std::to_string(n) + "]");
  auto id_of = [&](int i) { return scene.view_ids.empty() ? i : scene.view_ids[i]; };
  std::vector<int> out;
  if (pairs) {
    const int ref_id = id_of(ref_index);
    auto it = pairs->find(ref_id);
    if (it == pairs->end())
      throw ValidationError("pair file has no entry for view " + std::to_string(ref_id));
    for (int id : it->second) {
      int idx = -1;
      for (int i = 0; i < n; ++i)
        if (id_of(i) == id) idx = i;
      if (idx < 0) throw ValidationError("pair file references unknown view " + std::to_string(id));
      if (idx == ref_index) continue;
      if (static_cast<int>(out.size()) < window - 1) out.push_back(idx);
    }
    if (static_cast<int>(out.size()) < window - 1)
      throw ValidationError("pair file lists too few neighbors for view " + std::to_string(ref_id));
    return out;
  }
  for (int i = 0; i < n; ++i)
    if (i != ref_index) out.push_back(i);
  std::stable_sort(out.begin(), out.end(), [ref_index](int a, int b) {
    const int da = std::abs(a - ref_index), db = std::abs(b - ref_index);
    return da != db ? da < db : a < b;
  });
  out.resize(window - 1);
  return out;
}

std::vector<double> depth_hypotheses(const Camera& cam) {
  std::vector<double> h(cam.num_depth);
  for (int k = 0; k < cam.num_depth; ++k) h[k] = cam.depth_min + k * cam.depth_interval;
  return h;
}

MultiViewSample make_sample(const Scene& scene, int ref_index,
                            const std::vector<int>& source_indices) {
  std::set<int> seen{ref_index};
  for (int s : source_indices) {
    if (s < 0 || s >= scene.size())
      throw ValidationError("source index " + std::to_string(s) + " out of range");
    if (!seen.insert(s).second)
      throw ValidationError("duplicate or reference view among sources: " + std::to_string(s));
  }
  MultiViewSample sample;
  sample.ref_index = ref_index;
  sample.source_indices = source_indices;
  sample.ref_image = scene.images.at(ref_index);
  sample.ref_camera = scene.cameras.at(ref_index);
  for (int s : source_indices) {
    sample.source_images.push_back(scene.images[s]);
    sample.source_cameras.push_back(scene.cameras[s]);
  }
  sample.depth_hypotheses = depth_hypotheses(sample.ref_camera);
  return sample;
}

Tensor resample_image(const Tensor& image, int height, int width, double factor) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out({c, height, width});
  for (int y = 0; y < height; ++y) {
    const double fy = std::min(y / factor, h - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::min(x / factor, w - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch)
        out.at(ch, y, x) = (1 - wy) * ((1 - wx) * image.at(ch, y0, x0) + wx * image.at(ch, y0, x1)) +
                           wy * ((1 - wx) * image.at(ch, y1, x0) + wx * image.at(ch, y1, x1));
    }
  }
  return out;
}

MultiViewSample scale_sample(const MultiViewSample& sample, double factor, int stride) {
  if (!(factor > 0.0 && factor <= 1.0))
    throw ValidationError("scale factor must lie in (0, 1]");
  if (factor == 1.0) return sample;
  const double fh = sample.height() * factor, fw = sample.width() * factor;
  const int h = static_cast<int>(std::lround(fh)), w = static_cast<int>(std::lround(fw));
  if (std::abs(fh - h) > 1e-9 || std::abs(fw - w) > 1e-9 || h == 0 || w == 0)
    throw ValidationError("scaled size " + std::to_string(fw) + "x" + std::to_string(fh) +
                          " is not integral");
  if (h % stride != 0 || w % stride != 0)
    throw ValidationError("scaled size " + std::to_string(w) + "x" + std::to_string(h) +
                          " not divisible by " + std::to_string(stride));
  auto scale_cam = [factor](Camera cam) {
    cam.intrinsics.topRows<2>() *= factor;
    return cam;
  };
  MultiViewSample out = sample;
  out.ref_image = resample_image(sample.ref_image, h, w, factor);
  out.ref_camera = scale_cam(sample.ref_camera);
  for (std::size_t i = 0; i < sample.source_images.size(); ++i) {
    out.source_images[i] = resample_image(sample.source_images[i], h, w, factor);
    out.source_cameras[i] = scale_cam(sample.source_cameras[i]);
  }
  return out;
}

}  // namespace muvie
