#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "leafbench/errors.hpp"

namespace leafbench {

// ---------------------------------------------------------------------------
// Catalog of the six plants and their 28 leaf conditions, in canonical order.
// The order fixes the layout of every label vector, so it must not change.
// ---------------------------------------------------------------------------

struct CatalogEntry {
  std::string_view plant;
  std::string_view condition;
  std::size_t samples;  // image count in the reference collection
};

inline constexpr std::array<std::string_view, 6> kPlants = {"Tomato", "Potato", "Corn",
                                                            "Rice",   "Apple",  "Grape"};

inline constexpr std::array<CatalogEntry, 28> kCatalog = {{
    {"Tomato", "Healthy", 1955},
    {"Tomato", "Early Blight", 1955},
    {"Tomato", "Late Blight", 1955},
    {"Tomato", "Leaf Mold", 1955},
    {"Tomato", "Septoria Leaf Spot", 1955},
    {"Tomato", "Spider Mites", 1955},
    {"Tomato", "Target Spot", 1955},
    {"Tomato", "Tomato Mosaic Virus", 1955},
    {"Tomato", "Yellow Leaf Curl Virus", 1955},
    {"Potato", "Healthy", 152},
    {"Potato", "Early Blight", 152},
    {"Potato", "Late Blight", 152},
    {"Corn", "Healthy", 2052},
    {"Corn", "Cercospora Leaf Spot", 2052},
    {"Corn", "Common Rust", 2052},
    {"Corn", "Northern Leaf Blight", 2052},
    {"Rice", "Healthy", 1046},
    {"Rice", "Brown Spot", 1046},
    {"Rice", "Hispa", 1046},
    {"Rice", "Leaf Blast", 1046},
    {"Apple", "Healthy", 2200},
    {"Apple", "Apple Scab", 2200},
    {"Apple", "Black Rot", 2200},
    {"Apple", "Cedar Apple Rust", 2200},
    {"Grape", "Black Measles", 2115},
    {"Grape", "Black Rot", 2115},
    {"Grape", "Leaf Blight", 2115},
    {"Grape", "Healthy", 2115},
}};

inline constexpr std::size_t kPlantCount = kPlants.size();

namespace detail {

inline std::string trim(std::string_view s) {
  auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace detail

/// Canonical spelling of a plant name (trimmed, case-insensitive), if known.
inline std::optional<std::string> canonical_plant(std::string_view name) {
  const auto t = detail::trim(name);
  for (auto p : kPlants)
    if (detail::iequals(p, t)) return std::string(p);
  return std::nullopt;
}

/// Canonical spelling of a condition listed for `plant` in the catalog.
inline std::optional<std::string> canonical_condition(std::string_view plant, std::string_view name) {
  const auto tp = detail::trim(plant);
  const auto tc = detail::trim(name);
  for (const auto& e : kCatalog)
    if (detail::iequals(e.plant, tp) && detail::iequals(e.condition, tc)) return std::string(e.condition);
  return std::nullopt;
}

enum class LabelMode { paired, shared };

inline std::string to_string(LabelMode mode) { return mode == LabelMode::paired ? "paired" : "shared"; }

inline LabelMode parse_label_mode(std::string_view s) {
  if (detail::iequals(s, "paired")) return LabelMode::paired;
  if (detail::iequals(s, "shared")) return LabelMode::shared;
  throw Error(ErrorKind::ConfigError, "label mode must be 'paired' or 'shared', got '" + std::string(s) + "'");
}

struct LabelPair {
  std::string plant;
  std::string condition;
  friend bool operator==(const LabelPair&, const LabelPair&) = default;
};

/// Result of decoding a prediction vector.
struct Diagnosis {
  std::size_t plant_index = 0;
  std::size_t condition_index = 0;  // index within the condition group
  std::string plant;
  std::string condition;
};

/// Joint plant + condition label space. Vector layout is the six plants
/// followed by the condition group. Immutable once built.
class LabelSpace {
 public:
  struct Condition {
    std::string name;
    std::optional<std::size_t> plant;  // set in paired mode only
  };

  LabelSpace() = default;

  /// Space over every catalog pair.
  static LabelSpace full(LabelMode mode) {
    std::vector<LabelPair> pairs;
    for (const auto& e : kCatalog) pairs.push_back({std::string(e.plant), std::string(e.condition)});
    return from_pairs(pairs, mode, false);
  }

  /// Builds a space covering exactly the given (plant, condition) pairs.
  /// Names are matched case-insensitively after trimming. Catalog pairs come
  /// first in catalog order; with `permissive`, pairs outside the catalog
  /// (known plant, unknown condition) are accepted verbatim and appended in
  /// sorted order.
  static LabelSpace from_pairs(std::span<const LabelPair> pairs, LabelMode mode, bool permissive) {
    std::vector<std::pair<std::size_t, std::string>> known;    // (catalog row, plant)
    std::vector<std::pair<std::size_t, std::string>> unknown;  // (plant index, condition)
    for (const auto& pr : pairs) {
      auto plant = canonical_plant(pr.plant);
      if (!plant) throw Error(ErrorKind::UnknownLabel, "unknown plant '" + pr.plant + "'");
      auto cond = canonical_condition(*plant, pr.condition);
      if (cond) {
        for (std::size_t row = 0; row < kCatalog.size(); ++row) {
          if (kCatalog[row].plant == *plant && kCatalog[row].condition == *cond) {
            known.emplace_back(row, *plant);
            break;
          }
        }
      } else if (permissive) {
        auto trimmed = detail::trim(pr.condition);
        if (trimmed.empty()) throw Error(ErrorKind::UnknownLabel, "empty condition name for " + *plant);
        unknown.emplace_back(plant_index_of(*plant), trimmed);
      } else {
        throw Error(ErrorKind::UnknownLabel,
                    "condition '" + pr.condition + "' is not listed for plant '" + *plant + "'");
      }
    }
    std::sort(known.begin(), known.end());
    known.erase(std::unique(known.begin(), known.end()), known.end());
    std::sort(unknown.begin(), unknown.end());
    unknown.erase(std::unique(unknown.begin(), unknown.end(), [](const auto& a, const auto& b) {
                    return a.first == b.first && detail::iequals(a.second, b.second);
                  }),
                  unknown.end());

    std::vector<std::pair<std::size_t, std::string>> ordered;  // (plant index, condition)
    for (const auto& [row, plant] : known) ordered.emplace_back(plant_index_of(plant), std::string(kCatalog[row].condition));
    for (auto& u : unknown) ordered.push_back(u);

    LabelSpace space;
    space.mode_ = mode;
    for (auto p : kPlants) space.plants_.emplace_back(p);
    for (const auto& [plant, name] : ordered) {
      std::size_t ci;
      if (mode == LabelMode::paired) {
        ci = space.conditions_.size();
        space.conditions_.push_back({name, plant});
      } else {
        auto it = std::find_if(space.conditions_.begin(), space.conditions_.end(),
                               [&](const Condition& c) { return detail::iequals(c.name, name); });
        if (it == space.conditions_.end()) {
          ci = space.conditions_.size();
          space.conditions_.push_back({name, std::nullopt});
        } else {
          ci = static_cast<std::size_t>(it - space.conditions_.begin());
        }
      }
      space.valid_.emplace_back(plant, ci);
    }
    return space;
  }

  LabelMode mode() const { return mode_; }
  const std::vector<std::string>& plants() const { return plants_; }
  const std::vector<Condition>& conditions() const { return conditions_; }
  std::size_t condition_count() const { return conditions_.size(); }
  /// Label vector length: plant group plus condition group.
  std::size_t dim() const { return plants_.size() + conditions_.size(); }
  /// (plant index, condition index) for every valid pair.
  const std::vector<std::pair<std::size_t, std::size_t>>& valid_pair_indices() const { return valid_; }

  /// Condition identifier: "Plant/Name" in paired mode, "Name" in shared mode.
  std::string condition_id(std::size_t ci) const {
    const auto& c = conditions_.at(ci);
    return c.plant ? plants_[*c.plant] + "/" + c.name : c.name;
  }

  /// Names for every vector position, plants first.
  std::vector<std::string> label_names() const {
    std::vector<std::string> names = plants_;
    for (std::size_t ci = 0; ci < conditions_.size(); ++ci) names.push_back(condition_id(ci));
    return names;
  }

  std::optional<std::size_t> plant_index(std::string_view name) const {
    const auto t = detail::trim(name);
    for (std::size_t i = 0; i < plants_.size(); ++i)
      if (detail::iequals(plants_[i], t)) return i;
    return std::nullopt;
  }

  /// Index of the condition for a valid pair, or nullopt when the pair is not valid.
  std::optional<std::size_t> condition_index(std::string_view plant, std::string_view condition) const {
    auto pi = plant_index(plant);
    if (!pi) return std::nullopt;
    const auto tc = detail::trim(condition);
    for (const auto& [p, c] : valid_)
      if (p == *pi && detail::iequals(conditions_[c].name, tc)) return c;
    return std::nullopt;
  }

  bool is_valid(std::size_t plant, std::size_t condition) const {
    return std::find(valid_.begin(), valid_.end(), std::pair{plant, condition}) != valid_.end();
  }

  /// Condition indices valid for a plant, ascending.
  std::vector<std::size_t> conditions_for_plant(std::size_t plant) const {
    std::vector<std::size_t> out;
    for (const auto& [p, c] : valid_)
      if (p == plant) out.push_back(c);
    std::sort(out.begin(), out.end());
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json conds = nlohmann::json::array();
    for (std::size_t ci = 0; ci < conditions_.size(); ++ci) conds.push_back(condition_id(ci));
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& [p, c] : valid_) pairs.push_back({plants_[p], conditions_[c].name});
    return {{"plants", plants_}, {"conditions", conds}, {"mode", to_string(mode_)}, {"valid_pairs", pairs}};
  }

  /// Rebuilds a space from its JSON form, checking that the stored condition
  /// list matches what the pairs imply.
  static LabelSpace from_json(const nlohmann::json& j) {
    try {
      const auto mode = parse_label_mode(j.at("mode").get<std::string>());
      const auto plants = j.at("plants").get<std::vector<std::string>>();
      if (plants.size() != kPlants.size() || !std::equal(plants.begin(), plants.end(), kPlants.begin()))
        throw Error(ErrorKind::ConfigError, "label space plants do not match the canonical plant list");
      std::vector<LabelPair> pairs;
      for (const auto& p : j.at("valid_pairs")) pairs.push_back({p.at(0).get<std::string>(), p.at(1).get<std::string>()});
      auto space = from_pairs(pairs, mode, true);
      const auto conds = j.at("conditions").get<std::vector<std::string>>();
      if (conds.size() != space.condition_count())
        throw Error(ErrorKind::ConfigError, "label space condition count disagrees with its valid pairs");
      for (std::size_t i = 0; i < conds.size(); ++i)
        if (conds[i] != space.condition_id(i))
          throw Error(ErrorKind::ConfigError, "label space condition order disagrees at '" + conds[i] + "'");
      return space;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::ConfigError, std::string("malformed label space: ") + e.what());
    }
  }

  friend bool operator==(const LabelSpace& a, const LabelSpace& b) {
    return a.mode_ == b.mode_ && a.valid_ == b.valid_ && a.label_names() == b.label_names();
  }

 private:
  static std::size_t plant_index_of(std::string_view canonical) {
    return static_cast<std::size_t>(std::find(kPlants.begin(), kPlants.end(), canonical) - kPlants.begin());
  }

  LabelMode mode_ = LabelMode::paired;
  std::vector<std::string> plants_;
  std::vector<Condition> conditions_;
  std::vector<std::pair<std::size_t, std::size_t>> valid_;
};

/// Every valid pair of the space, by name.
inline std::vector<LabelPair> valid_pairs(const LabelSpace& space) {
  std::vector<LabelPair> out;
  for (const auto& [p, c] : space.valid_pair_indices())
    out.push_back({space.plants()[p], space.conditions()[c].name});
  return out;
}

/// Binary target: one at the plant's slot and one at the condition's slot.
template <typename T = double>
std::vector<T> encode_label(std::string_view plant, std::string_view condition, const LabelSpace& space) {
  auto pi = space.plant_index(plant);
  auto ci = space.condition_index(plant, condition);
  if (!pi || !ci)
    throw Error(ErrorKind::InvalidPair,
                "(" + std::string(plant) + ", " + std::string(condition) + ") is not a valid pair");
  std::vector<T> v(space.dim(), T(0));
  v[*pi] = T(1);
  v[space.plants().size() + *ci] = T(1);
  return v;
}

namespace detail {

template <typename T, typename Range>
std::size_t argmax_over(std::span<const T> values, const Range& indices, std::size_t offset) {
  std::size_t best = *std::begin(indices);
  for (std::size_t i : indices)
    if (values[offset + i] > values[offset + best]) best = i;  // strict: lowest index wins ties
  return best;
}

}  // namespace detail

/// Group-wise argmax decode. With `constrained`, the condition is chosen only
/// among conditions valid for the decoded plant; if that plant has no valid
/// conditions the full condition group is used.
template <typename T>
Diagnosis decode_prediction(std::span<const T> pred, const LabelSpace& space, bool constrained) {
  if (pred.size() != space.dim())
    throw Error(ErrorKind::ShapeMismatch, "prediction length " + std::to_string(pred.size()) +
                                              " != label dimension " + std::to_string(space.dim()));
  if (space.condition_count() == 0) throw Error(ErrorKind::ShapeMismatch, "label space has no conditions");
  const std::size_t np = space.plants().size();
  std::vector<std::size_t> all_plants(np), all_conds(space.condition_count());
  for (std::size_t i = 0; i < np; ++i) all_plants[i] = i;
  for (std::size_t i = 0; i < all_conds.size(); ++i) all_conds[i] = i;

  Diagnosis d;
  d.plant_index = detail::argmax_over(pred, all_plants, 0);
  auto allowed = constrained ? space.conditions_for_plant(d.plant_index) : std::vector<std::size_t>{};
  d.condition_index = allowed.empty() ? detail::argmax_over(pred, all_conds, np)
                                      : detail::argmax_over(pred, allowed, np);
  d.plant = space.plants()[d.plant_index];
  d.condition = space.conditions()[d.condition_index].name;
  return d;
}

template <typename T>
Diagnosis decode_prediction(const std::vector<T>& pred, const LabelSpace& space, bool constrained) {
  return decode_prediction(std::span<const T>(pred), space, constrained);
}

}  // namespace leafbench
