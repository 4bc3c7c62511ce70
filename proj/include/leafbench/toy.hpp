#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "leafbench/image.hpp"
#include "leafbench/labels.hpp"
#include "leafbench/rng.hpp"
#include "leafbench/tensor.hpp"

namespace leafbench::toy {

/// Procedural leaf stand-ins: a noisy gray field carrying one colored patch.
/// The patch color identifies the plant; a healthy patch is solid, any other
/// condition adds a condition-specific dark speckle pattern.
struct ToyImages {
  Tensor<float> raw;  // [n, side, side, 3] in [0,255]
  std::vector<LabelPair> labels;
};

inline constexpr std::array<std::array<float, 3>, 6> kPlantColors = {{
    {220, 40, 40},   // red
    {40, 80, 230},   // blue
    {235, 210, 30},  // yellow
    {200, 40, 210},  // magenta
    {30, 200, 200},  // cyan
    {250, 140, 20},  // orange
}};

/// The default toy label set: four plants, each with Healthy and one disease.
inline std::vector<LabelPair> default_pairs() {
  return {{"Tomato", "Healthy"}, {"Tomato", "Early Blight"}, {"Potato", "Healthy"}, {"Potato", "Late Blight"},
          {"Corn", "Healthy"},   {"Corn", "Common Rust"},    {"Apple", "Healthy"},  {"Apple", "Apple Scab"}};
}

inline ToyImages make_images(const std::vector<LabelPair>& pairs, std::size_t per_class, std::size_t side,
                             std::uint64_t seed) {
  ToyImages out;
  const std::size_t n = pairs.size() * per_class;
  out.raw = Tensor<float>(Shape{n, side, side, 3});
  std::mt19937_64 gen(seed);
  std::size_t k = 0;
  for (std::size_t rep = 0; rep < per_class; ++rep)
    for (const auto& pr : pairs) {
      const auto plant = canonical_plant(pr.plant).value_or(pr.plant);
      std::size_t pi = 0;
      while (pi < kPlants.size() && kPlants[pi] != plant) ++pi;
      const auto& color = kPlantColors[pi % kPlantColors.size()];
      const bool healthy = detail::iequals(detail::trim(pr.condition), "Healthy");
      // speckle period depends on the condition name so distinct diseases differ
      std::size_t name_sum = 0;
      for (unsigned char ch : detail::trim(pr.condition)) name_sum += ch;
      const std::size_t period = 3 + name_sum % 3;

      const std::size_t patch = side / 3 + uniform_below(gen, side / 4 + 1);
      const std::size_t y0 = uniform_below(gen, side - patch + 1), x0 = uniform_below(gen, side - patch + 1);
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const float noise = static_cast<float>(20.0 * uniform_unit(gen));
          const bool inside = y >= y0 && y < y0 + patch && x >= x0 && x < x0 + patch;
          for (std::size_t c = 0; c < 3; ++c) {
            float v = 110.0f + noise;
            if (inside) {
              v = color[c] - noise * 0.5f;
              if (!healthy && (y - y0) % period == 0 && (x - x0) % period == 0) v = 30.0f;
            }
            out.raw.at(k, y, x, c) = std::clamp(v, 0.0f, 255.0f);
          }
        }
      out.labels.push_back({plant, pr.condition});
      ++k;
    }
  return out;
}

/// Writes a toy dataset in the `<root>/<plant>/<condition>/<file>.png` layout.
inline void write_dataset(const std::filesystem::path& root, const std::vector<LabelPair>& pairs,
                          std::size_t per_class, std::size_t side, std::uint64_t seed) {
  auto imgs = make_images(pairs, per_class, side, seed);
  for (std::size_t i = 0; i < imgs.labels.size(); ++i) {
    Tensor<float> one(Shape{1, side, side, 3});
    auto src = imgs.raw.sample(i);
    std::copy(src.begin(), src.end(), one.values().begin());
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05zu.png", i);
    write_image(root / imgs.labels[i].plant / imgs.labels[i].condition / name, one);
  }
}

}  // namespace leafbench::toy
