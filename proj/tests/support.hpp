#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "leafbench/leafbench.hpp"

namespace testsupport {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "lb") {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline void touch(const std::filesystem::path& p, const std::string& content = "x") {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << content;
}

/// Solid-color RGB image file of the given size.
inline void write_solid(const std::filesystem::path& p, std::size_t h, std::size_t w, float r, float g, float b) {
  leafbench::Tensor<float> img(leafbench::Shape{1, h, w, 3});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.at(0, y, x, 0) = r;
      img.at(0, y, x, 1) = g;
      img.at(0, y, x, 2) = b;
    }
  leafbench::write_image(p, img);
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Scalar loss of a network on a batch, used by finite differences.
template <typename T>
double net_loss(leafbench::MultiLabelNet<T>& net, const leafbench::Tensor<T>& x, const leafbench::Tensor<T>& y) {
  return leafbench::bce_batch_loss(y, net.forward(x, true));
}

struct GradCheck {
  double worst_rel = 0;
  std::string worst_name;
  std::size_t checked = 0;
  std::size_t reduced = 0;  // entries re-checked with a smaller step
};

/// Branch decisions of a layer stack on x: the sign of every ReLU input and the
/// winning cell of every 2x2 max-pool window.
template <typename T>
std::vector<std::uint8_t> branch_pattern(leafbench::Sequential<T>& layers, leafbench::Tensor<T> x) {
  std::vector<std::uint8_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers.layer(i);
    if (l.kind() == "relu")
      for (T v : x.values()) out.push_back(v > T(0));
    if (l.kind() == "maxpool2") {
      const auto s = x.shape();
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t y = 0; y + 1 < s.h; y += 2)
          for (std::size_t xx = 0; xx + 1 < s.w; xx += 2)
            for (std::size_t c = 0; c < s.c; ++c) {
              std::uint8_t best = 0;
              T v = x.at(n, y, xx, c);
              for (std::uint8_t k = 1; k < 4; ++k)
                if (x.at(n, y + k / 2, xx + k % 2, c) > v) {
                  v = x.at(n, y + k / 2, xx + k % 2, c);
                  best = k;
                }
              out.push_back(best);
            }
    }
    x = l.forward(x, true);
  }
  return out;
}

using Pattern = std::function<std::vector<std::uint8_t>()>;

/// Central differences for every trainable entry against the analytic gradient.
/// Relative error is |a - n| / max(|a|, |n|, floor). When `pattern` is given and
/// a +-step perturbation changes it, the entry sits within one step of a kink;
/// the step is then cut by 10x until both sides keep the base pattern.
template <typename T>
GradCheck check_gradients(leafbench::MultiLabelNet<T>& net, const leafbench::Tensor<T>& x,
                          const leafbench::Tensor<T>& y, double step = 1e-4, double floor = 1e-6,
                          const Pattern& pattern = {}) {
  net.zero_grad();
  auto out = net.forward(x, true);
  net.backward_logits(leafbench::bce_logit_gradient(y, out));
  GradCheck gc;
  const auto base = pattern ? pattern() : std::vector<std::uint8_t>{};
  auto params = net.trainable_parameters();
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T saved = p.value[i];
      double h = step, up = 0, down = 0;
      for (;;) {
        p.value[i] = saved + static_cast<T>(h);
        up = net_loss(net, x, y);
        const bool up_same = !pattern || pattern() == base;
        p.value[i] = saved - static_cast<T>(h);
        down = net_loss(net, x, y);
        const bool down_same = !pattern || pattern() == base;
        if ((up_same && down_same) || h < 1e-8) break;
        h /= 10;
      }
      p.value[i] = saved;
      if (h < step) ++gc.reduced;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = static_cast<double>(p.grad[i]);
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++gc.checked;
      if (rel > gc.worst_rel) {
        gc.worst_rel = rel;
        gc.worst_name = p.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return gc;
}

/// Toy training set: colored-patch images, normalized, with encoded targets.
struct ToySet {
  leafbench::LabelSpace space;
  leafbench::Tensor<float> images;
  std::vector<std::vector<float>> targets;
  std::vector<leafbench::LabelPair> labels;
};

inline ToySet toy_set(std::size_t per_class, std::size_t side, std::uint64_t seed) {
  const auto pairs = leafbench::toy::default_pairs();
  auto imgs = leafbench::toy::make_images(pairs, per_class, side, seed);
  ToySet s{leafbench::LabelSpace::from_pairs(pairs, leafbench::LabelMode::paired, false),
           leafbench::normalize_image(imgs.raw), {}, imgs.labels};
  for (const auto& l : imgs.labels) s.targets.push_back(leafbench::encode_label<float>(l.plant, l.condition, s.space));
  return s;
}

}  // namespace testsupport
