#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "leafbench/dataset.hpp"
#include "leafbench/errors.hpp"
#include "leafbench/image.hpp"
#include "leafbench/labels.hpp"
#include "leafbench/tensor.hpp"

namespace leafbench {

/// Indexed access to (normalized image, target vector) pairs.
template <typename T>
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  /// Per-sample image shape with n == 1.
  virtual Shape sample_shape() const = 0;
  virtual std::size_t label_dim() const = 0;
  virtual void fetch(std::size_t i, std::span<T> pixels, std::span<T> target) const = 0;
};

template <typename T>
class InMemorySource final : public SampleSource<T> {
 public:
  InMemorySource(Tensor<T> images, std::vector<std::vector<T>> targets)
      : images_(std::move(images)), targets_(std::move(targets)) {
    if (images_.shape().n != targets_.size())
      throw Error(ErrorKind::ShapeMismatch, "image count and target count differ");
    for (const auto& t : targets_)
      if (t.size() != targets_.front().size()) throw Error(ErrorKind::ShapeMismatch, "ragged target vectors");
  }

  std::size_t size() const override { return targets_.size(); }
  Shape sample_shape() const override {
    auto s = images_.shape();
    s.n = 1;
    return s;
  }
  std::size_t label_dim() const override { return targets_.empty() ? 0 : targets_.front().size(); }

  void fetch(std::size_t i, std::span<T> pixels, std::span<T> target) const override {
    auto src = images_.sample(i);
    std::copy(src.begin(), src.end(), pixels.begin());
    std::copy(targets_[i].begin(), targets_[i].end(), target.begin());
  }

  const std::vector<std::vector<T>>& targets() const { return targets_; }

 private:
  Tensor<T> images_;
  std::vector<std::vector<T>> targets_;
};

/// Images read from disk on demand through the standard preprocessing path.
/// Decoded images are kept in memory until `cache_bytes` is used up.
class ManifestSource final : public SampleSource<float> {
 public:
  ManifestSource(std::vector<ImageSample> samples, const LabelSpace& space, std::size_t side = kInputSide,
                 std::size_t cache_bytes = std::size_t{2} << 30)
      : samples_(std::move(samples)), side_(side), cache_budget_(cache_bytes) {
    targets_.reserve(samples_.size());
    for (const auto& s : samples_) targets_.push_back(encode_label<float>(s.plant, s.condition, space));
    label_dim_ = space.dim();
  }

  std::size_t size() const override { return samples_.size(); }
  Shape sample_shape() const override { return {1, side_, side_, 3}; }
  std::size_t label_dim() const override { return label_dim_; }

  void fetch(std::size_t i, std::span<float> pixels, std::span<float> target) const override {
    const Tensor<float>* img = nullptr;
    Tensor<float> fresh;
    if (auto it = cache_.find(i); it != cache_.end()) {
      img = &it->second;
    } else {
      fresh = normalize_image(load_and_resize(samples_.at(i), side_));
      const std::size_t bytes = fresh.size() * sizeof(float);
      if (cached_bytes_ + bytes <= cache_budget_) {
        cached_bytes_ += bytes;
        img = &cache_.emplace(i, std::move(fresh)).first->second;
      } else {
        img = &fresh;
      }
    }
    std::copy(img->values().begin(), img->values().end(), pixels.begin());
    std::copy(targets_[i].begin(), targets_[i].end(), target.begin());
  }

  const std::vector<ImageSample>& samples() const { return samples_; }

 private:
  std::vector<ImageSample> samples_;
  std::vector<std::vector<float>> targets_;
  std::size_t side_;
  std::size_t label_dim_ = 0;
  std::size_t cache_budget_;
  mutable std::map<std::size_t, Tensor<float>> cache_;
  mutable std::size_t cached_bytes_ = 0;
};

/// Stacks the given samples into an image batch and a [n, 1, 1, dim] target batch.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> gather_batch(const SampleSource<T>& source, std::span<const std::size_t> indices) {
  auto shape = source.sample_shape();
  shape.n = indices.size();
  Tensor<T> images(shape);
  Tensor<T> targets(Shape{indices.size(), 1, 1, source.label_dim()});
  for (std::size_t b = 0; b < indices.size(); ++b) source.fetch(indices[b], images.sample(b), targets.sample(b));
  return {std::move(images), std::move(targets)};
}

}  // namespace leafbench
