#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "droptop/debias.hpp"
#include "mask_props.hpp"

using namespace droptop;

namespace {
AttentionMap map2(std::vector<float> v, std::size_t h, std::size_t w) { return {h, w, std::move(v)}; }
}  // namespace

TEST(ChannelPool, Examples) {
  auto ones = channel_pool(Tensor::full({3, 2, 2}, 1.0f));
  for (auto v : ones.values) EXPECT_EQ(v, 1.0f);
  // Two cells, channels (1,2,3) and (-3,0,3).
  auto a = channel_pool(Tensor({3, 1, 2}, {1, -3, 2, 0, 3, 3}));
  EXPECT_EQ(a.values, (std::vector<float>{2.0f, 0.0f}));
  auto single = channel_pool(Tensor({1, 2, 2}, {4, 5, 6, 7}));
  EXPECT_EQ(single.values, (std::vector<float>{4, 5, 6, 7}));
}

TEST(Fuse, Examples) {
  auto a = fuse(Tensor::full({2, 2, 2}, 1.0f), Tensor({2, 1, 1}, {2, 4}));
  for (auto v : a.values) EXPECT_EQ(v, 3.0f);
  auto z = fuse(Tensor::full({2, 3, 3}, 5.0f), Tensor::zeros({4, 2, 2}));
  for (auto v : z.values) EXPECT_EQ(v, 0.0f);
}

TEST(Fuse, MatchesLoopOracle) {
  std::mt19937_64 gen(8);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<float> f(4 * 6 * 6), l(8 * 3 * 3);
  for (auto& v : f) v = static_cast<float>(u(gen));
  for (auto& v : l) v = static_cast<float>(u(gen));
  const auto a = fuse(Tensor({4, 6, 6}, f), Tensor({8, 3, 3}, l));
  const auto ref = oracle::fuse({f.begin(), f.end()}, 4, 6, 6, {l.begin(), l.end()}, 8, 3, 3);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(a.values[i], ref[i], 1e-6);
}

TEST(Fuse, RejectsLargerLastMap) {
  EXPECT_THROW(fuse(Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 3, 2})), ShapeError);
}

TEST(Stabilize, Examples) {
  auto a = stabilize(5.0, 5.0, 32, 32);
  EXPECT_EQ(a.n_kappa, 51u);
  EXPECT_EQ(a.n_rand, 0u);
  auto b = stabilize(2.5, 5.0, 32, 32);
  EXPECT_EQ(b.n_kappa, 26u);
  EXPECT_EQ(b.n_rand, 25u);
  auto c = stabilize(0.0, 0.0, 32, 32);
  EXPECT_EQ(c.total(), 0u);
}

TEST(Stabilize, RoundsHalfUpAndRejectsKappaAboveGamma) {
  EXPECT_EQ(stabilize(50.0, 50.0, 1, 1).n_kappa, 1u);  // 0.5 rounds up
  EXPECT_THROW(stabilize(6.0, 5.0, 8, 8), std::invalid_argument);
  EXPECT_THROW(stabilize(1.0, 101.0, 8, 8), std::invalid_argument);
}

TEST(HardMask, ArgmaxCell) {
  Rng rng(0);
  auto m = hard_mask(map2({9, 7, 5, 1}, 2, 2), 1, 0, rng);
  EXPECT_EQ(m.values, (std::vector<float>{0, 1, 1, 1}));
}

TEST(HardMask, TieGoesToSmallerIndex) {
  Rng rng(0);
  auto m = hard_mask(map2({5, 5, 1, 1}, 2, 2), 1, 0, rng);
  EXPECT_EQ(m.values, (std::vector<float>{0, 1, 1, 1}));
}

TEST(HardMask, TopTwoPlusOneRandom) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<float> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    AttentionMap a{4, 5, std::vector<float>(20)};
    for (auto& v : a.values) v = u(gen);
    Rng rng(static_cast<std::uint64_t>(trial));
    const auto m = hard_mask(a, 2, 1, rng);
    EXPECT_EQ(m.dropped(), 3u);
    for (auto i : oracle::top_cells(a.values, 2)) EXPECT_EQ(m.values[i], 0.0f);
  }
}

TEST(HardMask, RandomComplementIsUniform) {
  // With n_kappa = 0 every cell should be dropped equally often.
  AttentionMap a{3, 3, std::vector<float>(9, 0.0f)};
  Rng rng(4);
  std::vector<int> hits(9, 0);
  const int trials = 90000;
  for (int t = 0; t < trials; ++t) {
    const auto m = hard_mask(a, 0, 2, rng);
    for (std::size_t i = 0; i < 9; ++i) hits[i] += m.values[i] == 0.0f;
  }
  const double p = 2.0 / 9.0, sd = std::sqrt(trials * p * (1 - p));
  for (int h : hits) EXPECT_NEAR(h, trials * p, 4 * sd);
}

TEST(SoftMask, Examples) {
  auto m = soft_mask(map2({9, 7, 5, 1}, 1, 4), 2);
  EXPECT_EQ(m.values, (std::vector<float>{0.5f, 1.0f, 1.0f, 1.0f}));
  auto one = soft_mask(map2({9, 7, 5, 1}, 1, 4), 1);
  EXPECT_EQ(one.values, (std::vector<float>{1, 1, 1, 1}));
}

TEST(SoftMask, MonotoneInRank) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<float> u(0, 1);
  AttentionMap a{8, 8, std::vector<float>(64)};
  for (auto& v : a.values) v = u(gen);
  const auto m = soft_mask(a, 10);
  const auto order = oracle::top_cells(a.values, 64);
  for (std::size_t r = 1; r < order.size(); ++r) EXPECT_LE(m.values[order[r - 1]], m.values[order[r]]);
  for (auto v : m.values) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(MaskProperties, RandomCases) {
  const auto r = mask_props::run(3000, 77);
  EXPECT_EQ(r.fuse_mismatch, 0u);
  EXPECT_EQ(r.zero_count, 0u);
  EXPECT_EQ(r.top_missing, 0u);
  EXPECT_EQ(r.scale_changed, 0u);
  EXPECT_EQ(r.soft_range, 0u);
  EXPECT_EQ(r.soft_rank, 0u);
}

TEST(Export, PgmAndCsv) {
  const auto dir = std::filesystem::temp_directory_path() / "droptop_export_test";
  std::filesystem::create_directories(dir);
  const auto a = map2({0, 1, 2, 4}, 2, 2);
  write_pgm((dir / "a.pgm").string(), a);
  write_csv((dir / "a.csv").string(), a);
  std::ifstream pgm(dir / "a.pgm", std::ios::binary);
  std::string magic;
  std::size_t w = 0, h = 0, maxv = 0;
  pgm >> magic >> w >> h >> maxv;
  pgm.get();
  std::vector<unsigned char> px(4);
  pgm.read(reinterpret_cast<char*>(px.data()), 4);
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, 2u);
  EXPECT_EQ(h, 2u);
  EXPECT_EQ(maxv, 255u);
  EXPECT_EQ(px.front(), 0);
  EXPECT_EQ(px.back(), 255);
  std::ifstream csv(dir / "a.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "0,1");
  std::filesystem::remove_all(dir);
}
