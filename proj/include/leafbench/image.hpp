#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "leafbench/dataset.hpp"
#include "leafbench/errors.hpp"
#include "leafbench/tensor.hpp"

namespace leafbench {

inline constexpr std::size_t kInputSide = 120;

/// Decodes an image file into an H x W x 3 RGB raster with values in [0,255].
/// Gray sources are replicated across channels, alpha is dropped, and 16-bit
/// sources are scaled down to the 8-bit range.
inline Tensor<float> decode_image(const std::filesystem::path& path) {
  cv::Mat raw;
  try {
    raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::DecodeError, path.string() + ": " + e.what());
  }
  if (raw.empty()) throw Error(ErrorKind::DecodeError, "cannot decode image " + path.string());

  double scale = 1.0;
  if (raw.depth() == CV_16U) scale = 1.0 / 257.0;
  else if (raw.depth() != CV_8U)
    throw Error(ErrorKind::DecodeError, "unsupported pixel depth in " + path.string());

  const int channels = raw.channels();
  if (channels != 1 && channels != 3 && channels != 4)
    throw Error(ErrorKind::DecodeError, "unsupported channel count " + std::to_string(channels) + " in " + path.string());

  cv::Mat px;
  raw.convertTo(px, CV_MAKETYPE(CV_32F, channels), scale);
  const auto h = static_cast<std::size_t>(px.rows), w = static_cast<std::size_t>(px.cols);
  Tensor<float> out(Shape{1, h, w, 3});
  for (std::size_t y = 0; y < h; ++y) {
    const float* row = px.ptr<float>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x) {
      const float* p = row + x * static_cast<std::size_t>(channels);
      if (channels == 1) {
        out.at(0, y, x, 0) = out.at(0, y, x, 1) = out.at(0, y, x, 2) = p[0];
      } else {
        // OpenCV stores BGR(A)
        out.at(0, y, x, 0) = p[2];
        out.at(0, y, x, 1) = p[1];
        out.at(0, y, x, 2) = p[0];
      }
    }
  }
  return out;
}

/// Writes an H x W x 3 raster with values in [0,255] as an 8-bit image.
inline void write_image(const std::filesystem::path& path, const Tensor<float>& rgb) {
  const auto& s = rgb.shape();
  cv::Mat m(static_cast<int>(s.h), static_cast<int>(s.w), CV_8UC3);
  for (std::size_t y = 0; y < s.h; ++y)
    for (std::size_t x = 0; x < s.w; ++x) {
      auto* p = m.ptr<unsigned char>(static_cast<int>(y)) + 3 * x;
      for (std::size_t c = 0; c < 3; ++c)
        p[2 - c] = cv::saturate_cast<unsigned char>(std::lround(rgb.at(0, y, x, c)));
    }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw Error(ErrorKind::ConfigError, "cannot write image " + path.string());
}

/// Bilinear resampling with pixel-centre alignment and edge clamping. Output
/// pixel (y, x) samples the source at ((y + 0.5) * H/out_h - 0.5, ...).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& src, std::size_t out_h, std::size_t out_w) {
  const auto& s = src.shape();
  if (out_h == 0 || out_w == 0) throw Error(ErrorKind::ShapeMismatch, "resize target must be non-empty");
  if (s.h == out_h && s.w == out_w) return src;
  Tensor<T> out(Shape{s.n, out_h, out_w, s.c});
  const double sy = static_cast<double>(s.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(s.w) / static_cast<double>(out_w);

  const auto coord = [](std::size_t i, double scale, std::size_t limit, std::size_t& lo, std::size_t& hi, double& frac) {
    double f = (static_cast<double>(i) + 0.5) * scale - 0.5;
    f = std::clamp(f, 0.0, static_cast<double>(limit - 1));
    lo = static_cast<std::size_t>(std::floor(f));
    hi = std::min(lo + 1, limit - 1);
    frac = f - static_cast<double>(lo);
  };

  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t y = 0; y < out_h; ++y) {
      std::size_t y0, y1;
      double fy;
      coord(y, sy, s.h, y0, y1, fy);
      for (std::size_t x = 0; x < out_w; ++x) {
        std::size_t x0, x1;
        double fx;
        coord(x, sx, s.w, x0, x1, fx);
        for (std::size_t c = 0; c < s.c; ++c) {
          const double top = (1 - fx) * src.at(n, y0, x0, c) + fx * src.at(n, y0, x1, c);
          const double bottom = (1 - fx) * src.at(n, y1, x0, c) + fx * src.at(n, y1, x1, c);
          out.at(n, y, x, c) = static_cast<T>((1 - fy) * top + fy * bottom);
        }
      }
    }
  return out;
}

/// Decodes and resizes a sample to side x side x 3, values in [0,255].
inline Tensor<float> load_and_resize(const ImageSample& sample, std::size_t side = kInputSide) {
  return resize_bilinear(decode_image(sample.path), side, side);
}

/// Divides every channel value by 255. Inputs outside [0,255] are rejected.
template <typename T>
Tensor<T> normalize_image(Tensor<T> raw) {
  for (auto& v : raw.values()) {
    if (!(v >= T(0) && v <= T(255)))
      throw Error(ErrorKind::OutOfRange, "pixel value " + std::to_string(v) + " outside [0,255]");
    v /= T(255);
  }
  return raw;
}

/// Full preprocessing path used for training and prediction.
inline Tensor<float> load_normalized(const std::filesystem::path& path, std::size_t side = kInputSide) {
  ImageSample s;
  s.path = path;
  return normalize_image(load_and_resize(s, side));
}

}  // namespace leafbench
