#include "dosgan/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cfenv>
#include <cmath>

namespace dosgan {

std::optional<std::vector<float>> decode_image(const std::filesystem::path& path, int h, int w, int channels) {
  cv::Mat img;
  try {
    img = cv::imread(path.string(), channels == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    return std::nullopt;
  }
  if (img.empty()) return std::nullopt;
  if (img.rows != h || img.cols != w) {
    const int interp = (img.rows > h || img.cols > w) ? cv::INTER_AREA : cv::INTER_LINEAR;
    cv::Mat resized;
    cv::resize(img, resized, cv::Size(w, h), 0, 0, interp);
    img = resized;
  }
  if (channels == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  std::vector<float> out(std::size_t(channels) * h * w);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* row = img.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        out[(std::size_t(c) * h + y) * w + x] = 2.0f * float(row[x * channels + c]) / 255.0f - 1.0f;
  }
  return out;
}

std::uint8_t to_uint8(float value) {
  const float v = (value + 1.0f) * 127.5f;
  // nearbyint honours the default round-to-nearest-even mode
  const float r = std::nearbyint(std::clamp(v, 0.0f, 255.0f));
  return static_cast<std::uint8_t>(r);
}

std::vector<std::uint8_t> to_bytes(const Tensor<float>& batch, int index) {
  const Shape4& s = batch.shape();
  std::vector<std::uint8_t> out(std::size_t(s.h) * s.w * s.c);
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x)
      for (int c = 0; c < s.c; ++c) out[(std::size_t(y) * s.w + x) * s.c + c] = to_uint8(batch(index, c, y, x));
  return out;
}

void write_png_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, int h, int w,
                     int channels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat img(h, w, channels == 1 ? CV_8UC1 : CV_8UC3, const_cast<std::uint8_t*>(pixels.data()));
  cv::Mat bgr;
  if (channels == 3)
    cv::cvtColor(img, bgr, cv::COLOR_RGB2BGR);
  else
    bgr = img;
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception& e) {
    throw Error("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw Error("cannot write " + path.string());
}

void write_png(const std::filesystem::path& path, const Tensor<float>& batch, int index) {
  const Shape4& s = batch.shape();
  write_png_bytes(path, to_bytes(batch, index), s.h, s.w, s.c);
}

void write_png_row(const std::filesystem::path& path, const std::vector<Tensor<float>>& images) {
  if (images.empty()) throw Error("write_png_row: no images");
  const Shape4 s = images.front().shape();
  const int total_w = s.w * int(images.size());
  std::vector<std::uint8_t> row(std::size_t(s.h) * total_w * s.c);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].shape().h != s.h || images[i].shape().w != s.w || images[i].shape().c != s.c)
      throw Error("write_png_row: image sizes differ");
    const auto bytes = to_bytes(images[i], 0);
    for (int y = 0; y < s.h; ++y)
      std::copy_n(bytes.begin() + std::ptrdiff_t(y) * s.w * s.c, s.w * s.c,
                  row.begin() + (std::ptrdiff_t(y) * total_w + std::ptrdiff_t(i) * s.w) * s.c);
  }
  write_png_bytes(path, row, s.h, total_w, s.c);
}

}  // namespace dosgan
