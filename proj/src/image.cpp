#include "muviecast/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "muviecast/error.hpp"

namespace muvie {

Tensor read_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_COLOR);
  if (mat.empty()) throw LoadError("cannot read image " + path.string());
  // Divide rather than multiply by the reciprocal so v / 255 round-trips.
  const double denom = mat.depth() == CV_16U ? 65535.0 : 255.0;
  mat.convertTo(mat, CV_64FC3);
  const int h = mat.rows, w = mat.cols;
  Tensor out({3, h, w});
  for (int y = 0; y < h; ++y) {
    const auto* row = mat.ptr<cv::Vec3d>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = row[x][2 - c] / denom;  // BGR -> RGB
  }
  return out;
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1))
    throw std::invalid_argument("write_image expects [3, H, W] or [1, H, W]");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  cv::Mat mat(h, w, c == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < h; ++y) {
    auto* row = mat.ptr<unsigned char>(y);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image.at(c == 3 ? 2 - ch : 0, y, x), 0.0, 1.0);
        row[x * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw Error("cannot write image " + path.string());
}

Tensor resize_bilinear(const Tensor& image, int height, int width) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == height && w == width) return image;
  Tensor out({c, height, width});
  const double sy = static_cast<double>(h) / height, sx = static_cast<double>(w) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, h - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, w - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < c; ++ch)
        out.at(ch, y, x) = (1 - wy) * ((1 - wx) * image.at(ch, y0, x0) + wx * image.at(ch, y0, x1)) +
                           wy * ((1 - wx) * image.at(ch, y1, x0) + wx * image.at(ch, y1, x1));
    }
  }
  return out;
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw LoadError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace muvie
