#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "leafbench/csv.hpp"
#include "leafbench/errors.hpp"
#include "leafbench/labels.hpp"
#include "leafbench/rng.hpp"
#include "leafbench/tensor.hpp"

namespace leafbench {

namespace fs = std::filesystem;

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct ImageSample {
  fs::path path;
  std::string plant;
  std::string condition;
  std::optional<Split> split;
  std::optional<Tensor<float>> pixels;  // side x side x 3 in [0,1] once loaded
};

using ClassKey = std::pair<std::string, std::string>;  // (plant, condition)

struct DatasetManifest {
  std::vector<ImageSample> samples;
  std::map<ClassKey, std::size_t> class_counts;
  fs::path root;

  void recount() {
    class_counts.clear();
    for (const auto& s : samples) ++class_counts[{s.plant, s.condition}];
  }

  /// Samples carrying the given split tag, in manifest order.
  std::vector<ImageSample> subset(Split split) const {
    std::vector<ImageSample> out;
    for (const auto& s : samples)
      if (s.split == split) out.push_back(s);
    return out;
  }

  std::vector<LabelPair> pairs() const {
    std::vector<LabelPair> out;
    for (const auto& [key, count] : class_counts) out.push_back({key.first, key.second});
    return out;
  }
};

struct SplitSpec {
  double train_fraction = 0.50;
  double val_fraction = 0.25;
  double test_fraction = 0.25;
  std::uint64_t seed = 0;

  void validate() const {
    for (double f : {train_fraction, val_fraction, test_fraction})
      if (!(f > 0.0 && f < 1.0)) throw Error(ErrorKind::ConfigError, "split fractions must lie in (0,1)");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
      throw Error(ErrorKind::ConfigError, "split fractions must sum to 1");
  }
};

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
  friend bool operator==(const SplitSizes&, const SplitSizes&) = default;
};

/// Per-class split sizes: validation and test are floored, train takes the rest.
inline SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  // The 1e-9 nudge keeps products like 0.3 * 10 from flooring to 2.
  const auto floor_of = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 1e-9));
  };
  SplitSizes s;
  s.val = floor_of(spec.val_fraction);
  s.test = floor_of(spec.test_fraction);
  s.train = n - s.val - s.test;
  return s;
}

inline bool has_image_extension(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".jpg" || ext == ".jpeg" || ext == ".png";
}

/// Walks `<root>/<plant>/<condition>/<image>` and records one sample per image
/// file. Directory names are resolved against `space`; entries whose names
/// start with '.' are ignored. Output is sorted by path.
inline DatasetManifest scan_dataset(const fs::path& root, const LabelSpace& space) {
  if (!fs::is_directory(root)) throw Error(ErrorKind::EmptyDataset, "dataset root is not a directory: " + root.string());
  DatasetManifest m;
  m.root = fs::absolute(root).lexically_normal();

  const auto hidden = [](const fs::directory_entry& e) { return e.path().filename().string().starts_with("."); };
  for (const auto& plant_dir : fs::directory_iterator(m.root)) {
    if (hidden(plant_dir) || !plant_dir.is_directory()) continue;
    const auto plant_name = plant_dir.path().filename().string();
    auto pi = space.plant_index(plant_name);
    if (!pi) throw Error(ErrorKind::UnknownLabel, "unknown plant directory '" + plant_name + "'");
    for (const auto& cond_dir : fs::directory_iterator(plant_dir.path())) {
      if (hidden(cond_dir) || !cond_dir.is_directory()) continue;
      const auto cond_name = cond_dir.path().filename().string();
      auto ci = space.condition_index(plant_name, cond_name);
      if (!ci)
        throw Error(ErrorKind::UnknownLabel,
                    "unknown condition directory '" + cond_name + "' under '" + plant_name + "'");
      for (const auto& file : fs::directory_iterator(cond_dir.path())) {
        if (hidden(file) || !file.is_regular_file() || !has_image_extension(file.path())) continue;
        ImageSample s;
        s.path = file.path();
        s.plant = space.plants()[*pi];
        s.condition = space.conditions()[*ci].name;
        m.samples.push_back(std::move(s));
      }
    }
  }
  if (m.samples.empty()) throw Error(ErrorKind::EmptyDataset, "no images found under " + m.root.string());
  std::sort(m.samples.begin(), m.samples.end(),
            [](const ImageSample& a, const ImageSample& b) { return a.path < b.path; });
  m.recount();
  return m;
}

/// Seeded per-class split. Classes are visited in (plant, condition) order and
/// each class is shuffled with one shared generator, so the assignment depends
/// only on the manifest order and the seed.
inline DatasetManifest stratified_split(const DatasetManifest& manifest, const SplitSpec& spec,
                                        bool permissive = false) {
  spec.validate();
  if (manifest.samples.empty()) throw Error(ErrorKind::EmptyDataset, "cannot split an empty manifest");

  std::map<ClassKey, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i)
    members[{manifest.samples[i].plant, manifest.samples[i].condition}].push_back(i);

  DatasetManifest out = manifest;
  std::mt19937_64 gen(spec.seed);
  for (auto& [key, idx] : members) {
    if (idx.size() < 3 && !permissive)
      throw Error(ErrorKind::ClassTooSmall, "class (" + key.first + ", " + key.second + ") has only " +
                                                std::to_string(idx.size()) + " samples; at least 3 are required");
    const auto sizes = split_sizes(idx.size(), spec);
    fisher_yates(std::span<std::size_t>(idx), gen);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Split tag = k < sizes.train ? Split::train : (k < sizes.train + sizes.val ? Split::val : Split::test);
      out.samples[idx[k]].split = tag;
    }
  }
  out.recount();
  return out;
}

/// Label space covering the pairs present in a manifest.
inline LabelSpace build_label_space(const DatasetManifest& manifest, LabelMode mode, bool permissive = false) {
  if (manifest.samples.empty() && !permissive)
    throw Error(ErrorKind::EmptyDataset, "cannot build a label space from an empty manifest");
  const auto pairs = manifest.pairs();
  return LabelSpace::from_pairs(pairs, mode, permissive);
}

// --- manifest CSV ----------------------------------------------------------

inline std::string manifest_to_csv(const DatasetManifest& m) {
  std::string out = "path,plant,condition,split\n";
  for (const auto& s : m.samples) {
    out += csv::join_row({s.path.generic_string(), s.plant, s.condition, s.split ? to_string(*s.split) : ""});
    out += '\n';
  }
  return out;
}

inline void write_manifest(const DatasetManifest& m, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  if (!os) throw Error(ErrorKind::ConfigError, "cannot write manifest " + file.string());
  os << manifest_to_csv(m);
}

/// Reads a manifest CSV. Relative sample paths resolve against the file's directory.
inline DatasetManifest read_manifest(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw Error(ErrorKind::EmptyDataset, "cannot open manifest " + file.string());
  DatasetManifest m;
  m.root = fs::absolute(file).parent_path();
  std::string line;
  if (!std::getline(is, line) || csv::split_row(line) != std::vector<std::string>{"path", "plant", "condition", "split"})
    throw Error(ErrorKind::ConfigError, "manifest header must be 'path,plant,condition,split'");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = csv::split_row(line);
    if (f.size() != 4)
      throw Error(ErrorKind::ConfigError, file.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    ImageSample s;
    s.path = f[0];
    if (s.path.is_relative()) s.path = m.root / s.path;
    auto plant = canonical_plant(f[1]);
    if (!plant) throw Error(ErrorKind::UnknownLabel, "unknown plant '" + f[1] + "' in " + file.string());
    s.plant = *plant;
    s.condition = canonical_condition(*plant, f[2]).value_or(detail::trim(f[2]));
    if (!f[3].empty()) {
      s.split = parse_split(f[3]);
      if (!s.split)
        throw Error(ErrorKind::ConfigError, file.string() + ":" + std::to_string(lineno) + ": bad split '" + f[3] + "'");
    }
    m.samples.push_back(std::move(s));
  }
  m.recount();
  return m;
}

}  // namespace leafbench
