#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "leafbench/labels.hpp"

using namespace leafbench;

namespace {

// Reference pairs typed out independently of the library catalog.
const std::vector<std::pair<std::string, std::string>> kReferencePairs = {
    {"Tomato", "Healthy"}, {"Tomato", "Early Blight"}, {"Tomato", "Late Blight"},
    {"Tomato", "Leaf Mold"}, {"Tomato", "Septoria Leaf Spot"}, {"Tomato", "Spider Mites"},
    {"Tomato", "Target Spot"}, {"Tomato", "Tomato Mosaic Virus"}, {"Tomato", "Yellow Leaf Curl Virus"},
    {"Potato", "Healthy"}, {"Potato", "Early Blight"}, {"Potato", "Late Blight"},
    {"Corn", "Healthy"}, {"Corn", "Cercospora Leaf Spot"}, {"Corn", "Common Rust"},
    {"Corn", "Northern Leaf Blight"}, {"Rice", "Healthy"}, {"Rice", "Brown Spot"},
    {"Rice", "Hispa"}, {"Rice", "Leaf Blast"}, {"Apple", "Healthy"},
    {"Apple", "Apple Scab"}, {"Apple", "Black Rot"}, {"Apple", "Cedar Apple Rust"},
    {"Grape", "Black Measles"}, {"Grape", "Black Rot"}, {"Grape", "Leaf Blight"},
    {"Grape", "Healthy"},
};

}  // namespace

TEST(Catalog, MatchesReferenceRows) {
  ASSERT_EQ(kCatalog.size(), kReferencePairs.size());
  for (std::size_t i = 0; i < kReferencePairs.size(); ++i) {
    EXPECT_EQ(kCatalog[i].plant, kReferencePairs[i].first) << i;
    EXPECT_EQ(kCatalog[i].condition, kReferencePairs[i].second) << i;
  }
}

TEST(Catalog, SampleCounts) {
  for (const auto& e : kCatalog) {
    if (e.plant == "Potato" && e.condition == "Healthy") {
      EXPECT_EQ(e.samples, 152u);
    }
    if (e.plant == "Tomato") {
      EXPECT_EQ(e.samples, 1955u);
    }
    if (e.plant == "Apple") {
      EXPECT_EQ(e.samples, 2200u);
    }
  }
}

TEST(LabelSpace, PairedFullSpace) {
  auto s = LabelSpace::full(LabelMode::paired);
  EXPECT_EQ(s.plants().size(), 6u);
  EXPECT_EQ(s.conditions().size(), 28u);
  EXPECT_EQ(s.valid_pair_indices().size(), 28u);
  EXPECT_EQ(s.dim(), 34u);
  const std::vector<std::string> order{"Tomato", "Potato", "Corn", "Rice", "Apple", "Grape"};
  EXPECT_EQ(s.plants(), order);
}

TEST(LabelSpace, SharedFullSpaceDeduplicatesTo20) {
  auto s = LabelSpace::full(LabelMode::shared);
  EXPECT_EQ(s.conditions().size(), 20u);
  EXPECT_EQ(s.valid_pair_indices().size(), 28u);
  std::set<std::string> names;
  for (const auto& [p, c] : kReferencePairs) names.insert(c);
  EXPECT_EQ(names.size(), 20u);
  std::set<std::string> got;
  for (const auto& c : s.conditions()) got.insert(c.name);
  EXPECT_EQ(got, names);
  // first appearance in reference order
  EXPECT_EQ(s.conditions()[0].name, "Healthy");
  EXPECT_EQ(s.conditions()[8].name, "Yellow Leaf Curl Virus");
  EXPECT_EQ(s.conditions()[9].name, "Cercospora Leaf Spot");
}

TEST(LabelSpace, SingleClassManifestKeepsAllPlants) {
  std::vector<LabelPair> pairs{{"Tomato", "Healthy"}};
  auto s = LabelSpace::from_pairs(pairs, LabelMode::paired, false);
  EXPECT_EQ(s.plants().size(), 6u);
  EXPECT_EQ(s.conditions().size(), 1u);
  EXPECT_EQ(s.valid_pair_indices().size(), 1u);
  EXPECT_EQ(s.dim(), 7u);
}

TEST(LabelSpace, OrderIndependentOfInputOrder) {
  std::vector<LabelPair> a{{"Grape", "Healthy"}, {"Tomato", "Leaf Mold"}, {"Potato", "Late Blight"}};
  std::vector<LabelPair> b{{"Potato", "Late Blight"}, {"Grape", "Healthy"}, {"Tomato", "Leaf Mold"}};
  auto sa = LabelSpace::from_pairs(a, LabelMode::paired, false);
  auto sb = LabelSpace::from_pairs(b, LabelMode::paired, false);
  EXPECT_TRUE(sa == sb);
  EXPECT_EQ(sa.conditions()[0].name, "Leaf Mold");
  EXPECT_EQ(sa.conditions()[1].name, "Late Blight");
  EXPECT_EQ(sa.conditions()[2].name, "Healthy");
}

TEST(LabelSpace, NamesMatchCaseInsensitivelyAfterTrim) {
  std::vector<LabelPair> pairs{{"  tomato ", "early BLIGHT"}};
  auto s = LabelSpace::from_pairs(pairs, LabelMode::paired, false);
  EXPECT_EQ(s.conditions()[0].name, "Early Blight");
  EXPECT_TRUE(s.condition_index("TOMATO", " early blight").has_value());
}

TEST(LabelSpace, UnknownLabelRejectedUnlessPermissive) {
  std::vector<LabelPair> pairs{{"Tomato", "Powdery Mildew"}};
  try {
    LabelSpace::from_pairs(pairs, LabelMode::paired, false);
    FAIL() << "expected UnknownLabel";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::UnknownLabel);
  }
  auto s = LabelSpace::from_pairs(pairs, LabelMode::paired, true);
  EXPECT_EQ(s.conditions().size(), 1u);
  EXPECT_EQ(s.conditions()[0].name, "Powdery Mildew");

  std::vector<LabelPair> bad_plant{{"Banana", "Healthy"}};
  EXPECT_THROW(LabelSpace::from_pairs(bad_plant, LabelMode::paired, false), Error);
}

TEST(LabelSpace, EmptyPermissiveSpaceHasNoPairs) {
  std::vector<LabelPair> none;
  auto s = LabelSpace::from_pairs(none, LabelMode::paired, true);
  EXPECT_TRUE(valid_pairs(s).empty());
  EXPECT_EQ(s.plants().size(), 6u);
}

TEST(ValidPairs, FullSpaceHas28) {
  auto s = LabelSpace::full(LabelMode::paired);
  auto v = valid_pairs(s);
  EXPECT_EQ(v.size(), 28u);
  std::set<std::pair<std::string, std::string>> got;
  for (const auto& p : v) got.insert({p.plant, p.condition});
  std::set<std::pair<std::string, std::string>> want(kReferencePairs.begin(), kReferencePairs.end());
  EXPECT_EQ(got, want);
}

TEST(ValidPairs, GrapeSubset) {
  std::vector<LabelPair> pairs;
  for (const auto& [p, c] : kReferencePairs)
    if (p == "Grape") pairs.push_back({p, c});
  auto s = LabelSpace::from_pairs(pairs, LabelMode::paired, false);
  auto v = valid_pairs(s);
  ASSERT_EQ(v.size(), 4u);
  std::set<std::string> conds;
  for (const auto& p : v) {
    EXPECT_EQ(p.plant, "Grape");
    conds.insert(p.condition);
  }
  EXPECT_EQ(conds, (std::set<std::string>{"Black Measles", "Black Rot", "Leaf Blight", "Healthy"}));
}

TEST(Encode, TomatoHealthyPaired) {
  auto s = LabelSpace::full(LabelMode::paired);
  auto v = encode_label(std::string("Tomato"), std::string("Healthy"), s);
  ASSERT_EQ(v.size(), 34u);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v[i], (i == 0 || i == 6) ? 1.0 : 0.0) << i;
}

TEST(Encode, TomatoHealthyIsFirstConditionInSingletonSpace) {
  std::vector<LabelPair> pairs{{"Tomato", "Healthy"}};
  auto s = LabelSpace::from_pairs(pairs, LabelMode::paired, false);
  auto v = encode_label("Tomato", "Healthy", s);
  EXPECT_EQ(v, (std::vector<double>{1, 0, 0, 0, 0, 0, 1}));
}

TEST(Encode, InvalidPairRejected) {
  auto s = LabelSpace::full(LabelMode::paired);
  try {
    encode_label("Potato", "Hispa", s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidPair);
  }
  auto sh = LabelSpace::full(LabelMode::shared);
  EXPECT_THROW(encode_label("Potato", "Hispa", sh), Error);
}

TEST(Encode, EveryTargetSumsToTwo) {
  for (auto mode : {LabelMode::paired, LabelMode::shared}) {
    auto s = LabelSpace::full(mode);
    for (const auto& [p, c] : kReferencePairs) {
      auto v = encode_label(p, c, s);
      EXPECT_EQ(std::accumulate(v.begin(), v.end(), 0.0), 2.0);
      std::size_t plant_ones = 0;
      for (std::size_t i = 0; i < 6; ++i) plant_ones += v[i] == 1.0;
      EXPECT_EQ(plant_ones, 1u);
    }
  }
}

TEST(Encode, SharedModeSharesLateBlight) {
  auto s = LabelSpace::full(LabelMode::shared);
  auto a = encode_label("Tomato", "Late Blight", s);
  auto b = encode_label("Potato", "Late Blight", s);
  EXPECT_TRUE(std::equal(a.begin() + 6, a.end(), b.begin() + 6));
  EXPECT_NE(a[0], b[0]);
}

TEST(Decode, RoundTripAllPairsBothModes) {
  for (auto mode : {LabelMode::paired, LabelMode::shared})
    for (bool constrained : {false, true}) {
      auto s = LabelSpace::full(mode);
      for (const auto& [p, c] : kReferencePairs) {
        auto d = decode_prediction(encode_label(p, c, s), s, constrained);
        EXPECT_EQ(d.plant, p);
        EXPECT_EQ(d.condition, c);
      }
    }
}

TEST(Decode, TiesGoToLowestIndex) {
  auto s = LabelSpace::full(LabelMode::paired);
  std::vector<double> pred(s.dim(), 0.5);
  auto d = decode_prediction(pred, s, false);
  EXPECT_EQ(d.plant_index, 0u);
  EXPECT_EQ(d.condition_index, 0u);
  auto dc = decode_prediction(pred, s, true);
  EXPECT_EQ(dc.plant_index, 0u);
  EXPECT_EQ(dc.condition_index, 0u);
}

TEST(Decode, ConstrainedRestrictsToDecodedPlant) {
  for (auto mode : {LabelMode::paired, LabelMode::shared}) {
    auto s = LabelSpace::full(mode);
    std::mt19937_64 gen(11);
    std::uniform_real_distribution<double> u(0.01, 0.6);
    std::vector<double> pred(s.dim());
    for (auto& v : pred) v = u(gen);
    const std::size_t potato = *s.plant_index("Potato");
    pred[potato] = 0.99;
    const std::size_t hispa = *s.condition_index("Rice", "Hispa");
    pred[6 + hispa] = 0.999;

    auto free = decode_prediction(pred, s, false);
    EXPECT_EQ(free.condition, "Hispa");

    // brute force over the three potato conditions
    std::string best;
    double best_v = -1;
    for (const auto* name : {"Early Blight", "Late Blight", "Healthy"}) {
      const auto ci = *s.condition_index("Potato", name);
      if (pred[6 + ci] > best_v) {
        best_v = pred[6 + ci];
        best = name;
      }
    }
    auto con = decode_prediction(pred, s, true);
    EXPECT_EQ(con.plant, "Potato");
    EXPECT_EQ(con.condition, best);
  }
}

TEST(Decode, ConstrainedAgreesWhenGlobalArgmaxIsValid) {
  auto s = LabelSpace::full(LabelMode::paired);
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0, 1);
  int agreed = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> pred(s.dim());
    for (auto& v : pred) v = u(gen);
    auto a = decode_prediction(pred, s, false);
    auto b = decode_prediction(pred, s, true);
    EXPECT_EQ(a.plant_index, b.plant_index);
    if (s.is_valid(a.plant_index, a.condition_index)) {
      EXPECT_EQ(a.condition_index, b.condition_index);
      ++agreed;
    } else {
      EXPECT_TRUE(s.is_valid(b.plant_index, b.condition_index));
    }
  }
  EXPECT_GT(agreed, 0);
}

TEST(Decode, InvariantUnderMonotoneTransform) {
  auto s = LabelSpace::full(LabelMode::shared);
  std::mt19937_64 gen(9);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> pred(s.dim()), warped(s.dim());
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = u(gen);
      warped[i] = std::exp(3.0 * pred[i]) - 7.0;
    }
    for (bool c : {false, true}) {
      auto a = decode_prediction(pred, s, c), b = decode_prediction(warped, s, c);
      EXPECT_EQ(a.plant_index, b.plant_index);
      EXPECT_EQ(a.condition_index, b.condition_index);
    }
  }
}

TEST(Decode, WrongLengthRejected) {
  auto s = LabelSpace::full(LabelMode::paired);
  std::vector<double> pred(10, 0.1);
  EXPECT_THROW(decode_prediction(pred, s, true), Error);
}

TEST(LabelSpaceJson, RoundTrip) {
  for (auto mode : {LabelMode::paired, LabelMode::shared}) {
    auto s = LabelSpace::full(mode);
    auto j = s.to_json();
    EXPECT_EQ(j.at("plants").size(), 6u);
    EXPECT_EQ(j.at("valid_pairs").size(), 28u);
    EXPECT_EQ(j.at("mode").get<std::string>(), to_string(mode));
    auto back = LabelSpace::from_json(nlohmann::json::parse(j.dump()));
    EXPECT_TRUE(back == s);
  }
}

TEST(LabelSpaceJson, RejectsGarbage) {
  EXPECT_THROW(LabelSpace::from_json(nlohmann::json::object()), Error);
  auto j = LabelSpace::full(LabelMode::paired).to_json();
  j["valid_pairs"].push_back({"Potato", "Hispa"});
  EXPECT_THROW(LabelSpace::from_json(j), Error);
}

TEST(LabelMode, Parse) {
  EXPECT_EQ(parse_label_mode("paired"), LabelMode::paired);
  EXPECT_EQ(parse_label_mode("Shared"), LabelMode::shared);
  EXPECT_THROW(parse_label_mode("both"), Error);
}
