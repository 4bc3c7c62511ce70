#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace leafbench;

namespace {

using Bits = std::vector<std::vector<std::uint8_t>>;

struct Oracle {
  double p = 0, r = 0, f = 0;
};

// Straight enumeration of every (sample, label) cell.
Oracle enumerate_cells(const Bits& pred, const Bits& target) {
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t s = 0; s < pred.size(); ++s)
    for (std::size_t l = 0; l < pred[s].size(); ++l) {
      tp += pred[s][l] == 1 && target[s][l] == 1;
      fp += pred[s][l] == 1 && target[s][l] == 0;
      fn += pred[s][l] == 0 && target[s][l] == 1;
    }
  Oracle o;
  o.p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  o.r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  o.f = o.p + o.r > 0 ? 2 * o.p * o.r / (o.p + o.r) : 0.0;
  return o;
}

// Images carry their sample index in the first pixel so a model can look its row up.
InMemorySource<double> indexed_source(const std::vector<std::vector<double>>& targets) {
  Tensor<double> img(Shape{targets.size(), 2, 2, 3});
  for (std::size_t s = 0; s < targets.size(); ++s) img.sample(s)[0] = static_cast<double>(s);
  return InMemorySource<double>(std::move(img), targets);
}

struct TableModel {
  std::vector<std::vector<double>> rows;
  Tensor<double> predict(const Tensor<double>& x) const {
    Tensor<double> out(Shape{x.shape().n, 1, 1, rows.front().size()});
    for (std::size_t b = 0; b < x.shape().n; ++b) {
      const auto& r = rows.at(static_cast<std::size_t>(x.sample(b)[0]));
      std::copy(r.begin(), r.end(), out.sample(b).begin());
    }
    return out;
  }
};

struct ConstantModel {
  std::size_t dim;
  double value;
  Tensor<double> predict(const Tensor<double>& x) const { return Tensor<double>(Shape{x.shape().n, 1, 1, dim}, value); }
};

std::vector<std::vector<double>> random_targets(const LabelSpace& space, std::size_t n, std::mt19937_64& gen) {
  const auto pairs = valid_pairs(space);
  std::vector<std::vector<double>> t;
  for (std::size_t s = 0; s < n; ++s) {
    const auto& p = pairs[uniform_below(gen, pairs.size())];
    t.push_back(encode_label<double>(p.plant, p.condition, space));
  }
  return t;
}

struct Row {
  const char* model;
  double p, r, f;
};

// Published precision / recall / F1 in percent.
constexpr Row kPublished[] = {
    {"DenseNet121", 94.34, 93.87, 94.1},  {"DenseNet169", 97.87, 96.85, 97.36},
    {"DenseNet201", 97.51, 96.65, 97.08}, {"InceptionV3", 95.9, 95.19, 95.55},
    {"InceptionResNetV2", 96.92, 93.95, 95.41}, {"MobileNet", 95.85, 95.75, 95.8},
    {"ResNet50", 94.8, 92.35, 93.56},     {"ResNet50V2", 96.66, 95.15, 95.9},
    {"ResNet101", 94.26, 91.44, 92.83},   {"ResNet101V2", 87.04, 84.07, 85.53},
    {"ResNet152", 64.21, 59.93, 62.0},    {"ResNet152V2", 93.54, 92.01, 92.77},
    {"VGG16", 92.53, 89.62, 91.05},       {"VGG19", 88.38, 85.05, 86.69},
    {"Xception", 97.88, 96.9, 97.38},
};

}  // namespace

TEST(Binarize, Examples) {
  EXPECT_EQ(binarize(std::vector<double>{0.9, 0.1}), (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(binarize(std::vector<double>{0.5}), (std::vector<std::uint8_t>{1}));
  EXPECT_EQ(binarize(std::vector<double>{0.49, 0.51}), (std::vector<std::uint8_t>{0, 1}));
  EXPECT_EQ(binarize(std::vector<float>{0.3f, 0.31f}, 0.3), (std::vector<std::uint8_t>{1, 1}));
  for (double bad : {0.0, 1.0, -0.1, std::nan("")}) EXPECT_THROW(binarize(std::vector<double>{0.5}, bad), Error);
}

TEST(Confusion, Examples) {
  const Bits same = {{1, 0, 1}, {0, 0, 1}};
  const auto c0 = confusion_counts(same, same);
  EXPECT_EQ(c0.fp, 0u);
  EXPECT_EQ(c0.fn, 0u);
  EXPECT_EQ(c0.tp, 3u);

  const auto c1 = confusion_counts(Bits{{1, 0, 1}}, Bits{{1, 1, 0}});
  EXPECT_EQ(c1, (ConfusionCounts{1, 1, 1, 0}));

  const auto c2 = confusion_counts(Bits{{0, 0, 0, 0}, {0, 0, 0, 0}}, Bits{{1, 0, 1, 0}, {0, 0, 0, 1}});
  EXPECT_EQ(c2.tp, 0u);
  EXPECT_EQ(c2.fn, 3u);
  EXPECT_EQ(c2.total(), 8u);
}

TEST(Confusion, ShapeMismatch) {
  try {
    confusion_counts(Bits{{1, 0}}, Bits{{1, 0}, {0, 1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  EXPECT_THROW(confusion_counts(Bits{{1, 0}}, Bits{{1, 0, 0}}), Error);
}

TEST(Scores, PrecisionRecallExamples) {
  EXPECT_DOUBLE_EQ(precision({8, 2, 0, 0}), 0.8);
  EXPECT_EQ(precision({0, 0, 5, 5}), 0.0);
  EXPECT_EQ(precision({7, 0, 3, 0}), 1.0);
  EXPECT_DOUBLE_EQ(recall({8, 0, 2, 0}), 0.8);
  EXPECT_EQ(recall({0, 4, 0, 1}), 0.0);
  EXPECT_EQ(recall({5, 3, 0, 0}), 1.0);
}

TEST(Scores, F1Examples) {
  EXPECT_NEAR(f1_score(0.9788, 0.969), 0.973875, 1e-6);
  EXPECT_EQ(f1_score(1, 1), 1.0);
  EXPECT_EQ(f1_score(0, 0), 0.0);
  EXPECT_NEAR(f1_score(0.6421, 0.5993), 0.6200, 5e-5);
}

TEST(Scores, PublishedTableIsInternallyConsistent) {
  ASSERT_EQ(std::size(kPublished), 15u);
  for (const auto& row : kPublished) {
    const double f = 100 * f1_score(row.p / 100, row.r / 100);
    EXPECT_NEAR(f, row.f, 0.02) << row.model;
  }
}

TEST(Scores, F1BetweenMinAndMaxAndBelowMean) {
  std::mt19937_64 gen(1);
  for (int i = 0; i < 1000; ++i) {
    const double p = uniform_unit(gen), r = uniform_unit(gen);
    const double f = f1_score(p, r);
    EXPECT_GE(f, std::min(p, r) - 1e-15);
    EXPECT_LE(f, std::max(p, r) + 1e-15);
    EXPECT_LE(f, (p + r) / 2 + 1e-15);
  }
}

TEST(Scores, MatchCellEnumerationOnRandomInstances) {
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + uniform_below(gen, 20), dim = 1 + uniform_below(gen, 40);
    const double density = uniform_unit(gen);
    Bits pred(n, std::vector<std::uint8_t>(dim)), target(n, std::vector<std::uint8_t>(dim));
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t l = 0; l < dim; ++l) {
        pred[s][l] = uniform_unit(gen) < density;
        target[s][l] = uniform_unit(gen) < 0.3;
      }
    const auto c = confusion_counts(pred, target);
    const auto o = enumerate_cells(pred, target);
    ASSERT_EQ(c.total(), n * dim);
    ASSERT_EQ(precision(c), o.p);
    ASSERT_EQ(recall(c), o.r);
    ASSERT_EQ(f1_score(precision(c), recall(c)), o.f);
  }
}

TEST(Evaluate, OracleModelIsPerfect) {
  const auto space = LabelSpace::full(LabelMode::paired);
  std::mt19937_64 gen(4);
  const auto targets = random_targets(space, 12, gen);
  const auto src = indexed_source(targets);
  TableModel m{targets};
  const auto r = evaluate_model<double>(m, src, space);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.pair_accuracy, 1.0);
  EXPECT_EQ(r.plant_accuracy, 1.0);
  EXPECT_EQ(r.counts.total(), 12u * 34);
  EXPECT_EQ(r.samples, 12u);
  EXPECT_EQ(r.per_label.size(), 34u);
}

TEST(Evaluate, ConstantHalfModelPredictsEverything) {
  for (auto mode : {LabelMode::paired, LabelMode::shared}) {
    const auto space = LabelSpace::full(mode);
    std::mt19937_64 gen(5);
    const auto src = indexed_source(random_targets(space, 9, gen));
    ConstantModel m{space.dim(), 0.5};
    const auto r = evaluate_model<double>(m, src, space, 0.5);
    EXPECT_EQ(r.recall, 1.0);
    EXPECT_DOUBLE_EQ(r.precision, 2.0 / static_cast<double>(space.dim()));
    EXPECT_EQ(r.counts.fn, 0u);
  }
}

TEST(Evaluate, RandomModelMatchesEnumeration) {
  const auto space = LabelSpace::full(LabelMode::paired);
  std::mt19937_64 gen(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto targets = random_targets(space, 10, gen);
    std::vector<std::vector<double>> probs(10, std::vector<double>(space.dim()));
    for (auto& row : probs)
      for (auto& v : row) v = uniform_unit(gen);
    const auto src = indexed_source(targets);
    TableModel m{probs};
    const double threshold = 0.2 + 0.6 * uniform_unit(gen);
    const auto r = evaluate_model<double>(m, src, space, threshold, 3);

    Bits pb, tb;
    for (std::size_t s = 0; s < 10; ++s) {
      pb.emplace_back();
      tb.emplace_back();
      for (std::size_t l = 0; l < space.dim(); ++l) {
        pb.back().push_back(probs[s][l] >= threshold);
        tb.back().push_back(targets[s][l] > 0.5);
      }
    }
    const auto o = enumerate_cells(pb, tb);
    EXPECT_EQ(r.precision, o.p);
    EXPECT_EQ(r.recall, o.r);
    EXPECT_EQ(r.f1, o.f);

    // per-label support counts the positives in each column
    for (std::size_t l = 0; l < space.dim(); ++l) {
      std::uint64_t support = 0;
      for (const auto& t : targets) support += t[l] > 0.5;
      EXPECT_EQ(r.per_label[l].second.support, support);
    }
  }
}

TEST(Evaluate, DecodedAccuracies) {
  const auto space = LabelSpace::full(LabelMode::paired);
  const std::vector<std::vector<double>> targets = {
      encode_label<double>("Tomato", "Leaf Mold", space), encode_label<double>("Corn", "Common Rust", space),
      encode_label<double>("Apple", "Healthy", space), encode_label<double>("Rice", "Hispa", space)};
  auto probs = targets;
  // right plant, wrong condition
  probs[1] = encode_label<double>("Corn", "Northern Leaf Blight", space);
  // wrong plant, and a condition that exists only for the true plant
  probs[3] = encode_label<double>("Potato", "Late Blight", space);
  const auto src = indexed_source(targets);
  TableModel m{probs};
  const auto r = evaluate_model<double>(m, src, space);
  EXPECT_DOUBLE_EQ(r.plant_accuracy, 0.75);
  EXPECT_DOUBLE_EQ(r.condition_accuracy, 0.5);
  EXPECT_DOUBLE_EQ(r.pair_accuracy, 0.5);
}

TEST(Evaluate, InvariantUnderSampleOrder) {
  const auto space = LabelSpace::full(LabelMode::shared);
  std::mt19937_64 gen(7);
  const auto targets = random_targets(space, 15, gen);
  std::vector<std::vector<double>> probs(15, std::vector<double>(space.dim()));
  for (auto& row : probs)
    for (auto& v : row) v = uniform_unit(gen);
  std::vector<std::size_t> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), gen);
  std::vector<std::vector<double>> t2, p2;
  for (auto i : perm) {
    t2.push_back(targets[i]);
    p2.push_back(probs[i]);
  }
  TableModel a{probs}, b{p2};
  const auto ra = evaluate_model<double>(a, indexed_source(targets), space);
  const auto rb = evaluate_model<double>(b, indexed_source(t2), space);
  EXPECT_EQ(ra.to_json(), rb.to_json());
}

TEST(Evaluate, Errors) {
  const auto space = LabelSpace::full(LabelMode::paired);
  EXPECT_THROW(evaluate_predictions(Tensor<double>(Shape{2, 1, 1, 34}), Tensor<double>(Shape{3, 1, 1, 34}), space),
               Error);
  try {
    evaluate_predictions(Tensor<double>(Shape{2, 1, 1, 5}), Tensor<double>(Shape{2, 1, 1, 5}), space);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(Report, JsonRoundTripAndCsvRow) {
  const auto space = LabelSpace::full(LabelMode::paired);
  std::mt19937_64 gen(9);
  const auto targets = random_targets(space, 6, gen);
  std::vector<std::vector<double>> probs(6, std::vector<double>(space.dim()));
  for (auto& row : probs)
    for (auto& v : row) v = uniform_unit(gen);
  TableModel m{probs};
  const auto r = evaluate_model<double>(m, indexed_source(targets), space);
  const auto j = r.to_json();
  for (const char* key : {"precision", "recall", "f1", "counts", "per_label", "plant_accuracy", "condition_accuracy",
                          "pair_accuracy"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j["per_label"].size(), 34u);
  EXPECT_TRUE(j["per_label"].contains("Tomato"));
  EXPECT_EQ(MetricsReport::from_json(j).to_json(), j);

  const auto row = csv::split_row(r.csv_row("Micro, CNN"));
  const auto header = csv::split_row(MetricsReport::csv_header());
  ASSERT_EQ(row.size(), header.size());
  EXPECT_EQ(row[0], "Micro, CNN");
  EXPECT_EQ(std::stod(row[3]), r.f1);
  EXPECT_EQ(std::stoull(row[4]), r.counts.tp);
}
