#include <gtest/gtest.h>

#include <sstream>

#include "droptop/metrics.hpp"

using namespace droptop;

TEST(AvgAccuracy, Examples) {
  EXPECT_NEAR(avg_accuracy(AccuracyMatrix{{0.9}, {0.6, 0.8}}), 0.8, 1e-12);
  EXPECT_DOUBLE_EQ(avg_accuracy(AccuracyMatrix{{1.0}, {1.0, 1.0}, {1.0, 1.0, 1.0}}), 1.0);
  EXPECT_DOUBLE_EQ(avg_accuracy(AccuracyMatrix{{0.37}}), 0.37);
  EXPECT_THROW(avg_accuracy(AccuracyMatrix{}), std::invalid_argument);
}

TEST(Forgetting, Examples) {
  EXPECT_NEAR(forgetting(AccuracyMatrix{{0.9}, {0.6, 0.8}}), 0.3, 1e-12);
  EXPECT_DOUBLE_EQ(forgetting(AccuracyMatrix{{0.7}, {0.7, 0.2}, {0.7, 0.2, 0.9}}), 0.0);
  EXPECT_NEAR(forgetting(AccuracyMatrix{{0.5}, {0.7, 0.8}}), -0.2, 1e-12);
  EXPECT_THROW(forgetting(AccuracyMatrix{{0.5}}), std::invalid_argument);
}

TEST(Forgetting, UsesBestEarlierAccuracy) {
  // Task 0 peaked at 0.9 after task 1, ends at 0.4; task 1 drops 0.8 -> 0.6.
  const AccuracyMatrix m{{0.5}, {0.9, 0.8}, {0.4, 0.6, 0.7}};
  EXPECT_NEAR(forgetting(m), (0.5 + 0.2) / 2.0, 1e-12);
}

TEST(AccuracyMatrix, RejectsBadShapeAndValues) {
  EXPECT_THROW((AccuracyMatrix{{0.5, 0.5}}), std::invalid_argument);
  EXPECT_THROW((AccuracyMatrix{{1.5}}), std::invalid_argument);
  AccuracyMatrix m(2);
  EXPECT_THROW(m.set(0, 1, 0.5), std::out_of_range);
  EXPECT_THROW(m.set(1, 0, -0.1), std::invalid_argument);
}

TEST(Accuracy, PermutationStable) {
  std::vector<int> pred{0, 1, 1, 0, 2}, truth{0, 1, 0, 0, 2};
  const double a = accuracy(pred, truth);
  std::vector<int> pp{2, 0, 0, 1, 1}, tt{2, 0, 0, 0, 1};
  EXPECT_DOUBLE_EQ(a, accuracy(pp, tt));
  EXPECT_DOUBLE_EQ(a, 0.8);
}

TEST(MeanStderr, Values) {
  const std::vector<double> xs{1, 2, 3, 4};
  const auto m = mean_stderr(xs);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.std_error, std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
  EXPECT_EQ(mean_stderr(std::vector<double>{7.0}).std_error, 0.0);
}

TEST(Diagnostics, ThresholdExamples) {
  const DiagnosticThresholds th{0.5, 0.2};
  EXPECT_EQ(classify_feature(0.9, 0.3, th), FeatureLabel::shortcut);
  EXPECT_EQ(classify_feature(0.9, 0.1, th), FeatureLabel::non_shortcut);
  EXPECT_EQ(classify_feature(0.4, 0.9, th), FeatureLabel::inactive);
  EXPECT_EQ(classify_feature(0.4, 0.0, th), FeatureLabel::inactive);
}

TEST(Diagnostics, PartitionAndValidation) {
  const std::vector<double> seen{0.1, 0.9, 0.7, 0.3, 0.8}, unseen{0.5, 0.6, 0.0, 0.2, 0.1};
  const auto labels = classify_features(seen, unseen, {0.5, 0.2});
  ASSERT_EQ(labels.size(), seen.size());
  EXPECT_EQ(labels[1], FeatureLabel::shortcut);
  EXPECT_EQ(labels[2], FeatureLabel::non_shortcut);
  EXPECT_EQ(labels[0], FeatureLabel::inactive);
  EXPECT_THROW(classify_features(seen, unseen, {0.1, 0.2}), std::invalid_argument);
}

TEST(Diagnostics, DefaultThresholdsArePercentiles) {
  const std::vector<double> seen{0, 1, 2, 3, 4};
  const auto th = default_thresholds(seen);
  EXPECT_DOUBLE_EQ(th.rho, 3.0);
  EXPECT_DOUBLE_EQ(th.eps, 1.0);
  EXPECT_DOUBLE_EQ(percentile({10.0}, 50.0), 10.0);
}

TEST(ActivationGap, Examples) {
  const std::vector<double> same{0.5, 0.5, 0.5};
  const std::vector<FeatureLabel> labels{FeatureLabel::shortcut, FeatureLabel::non_shortcut, FeatureLabel::inactive};
  const auto g = activation_gap(same, labels);
  EXPECT_DOUBLE_EQ(*g.shortcut_mean - *g.non_shortcut_mean, 0.0);
  const std::vector<double> two{3.0, 0.25};
  const std::vector<FeatureLabel> l2{FeatureLabel::shortcut, FeatureLabel::non_shortcut};
  const auto g2 = activation_gap(two, l2);
  EXPECT_DOUBLE_EQ(*g2.shortcut_mean - *g2.non_shortcut_mean, 2.75);
  const auto none = activation_gap(two, std::vector<FeatureLabel>{FeatureLabel::shortcut, FeatureLabel::shortcut});
  EXPECT_FALSE(none.non_shortcut_mean.has_value());
}

TEST(ActivationGap, HandBuiltModel) {
  // One block whose two channels are a large constant and a small constant:
  // zero weights, biases 3 and 0.25.
  BackboneConfig cfg;
  cfg.input_size = 4;
  cfg.stem_channels = 1;
  cfg.block_channels = {2};
  cfg.num_classes = 2;
  Model m(cfg);
  auto params = m.parameters();
  for (auto& p : params)
    for (auto& v : p.mutable_data()) v = 0.0f;
  params[3].mutable_data()[0] = 3.0f;
  params[3].mutable_data()[1] = 0.25f;
  const auto batch = Tensor::full({2, 3, 4, 4}, 0.5f);
  const auto means = mean_abs_features(m, batch);
  ASSERT_EQ(means.size(), 2u);
  const std::vector<FeatureLabel> labels{FeatureLabel::shortcut, FeatureLabel::non_shortcut};
  const auto g = activation_gap(m, batch, labels);
  EXPECT_NEAR(*g.shortcut_mean - *g.non_shortcut_mean, 2.75, 1e-6);
}

TEST(MutualInformation, Values) {
  const std::vector<int> x{0, 0, 1, 1}, y{0, 0, 1, 1}, z{0, 1, 0, 1};
  EXPECT_NEAR(mutual_information_bits(x, y), 1.0, 1e-12);
  EXPECT_NEAR(mutual_information_bits(x, z), 0.0, 1e-12);
}

TEST(Histogram, BinsAndCsv) {
  AttentionHistogram h(0.0, 1.0, 4);
  h.add(0.1, true);
  h.add(0.99, false);
  h.add(1.0, false);
  h.add(-3.0, true);
  EXPECT_EQ(h.shortcut[0], 2u);
  EXPECT_EQ(h.other[3], 2u);
  std::ostringstream os;
  h.write_csv(os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "bin_lo,bin_hi,shortcut_count,other_count");
}
