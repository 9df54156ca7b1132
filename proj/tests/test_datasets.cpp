#include <nkcca/datasets.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

namespace fs = std::filesystem;
using namespace nkcca;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("nkcca_datasets_" + name);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

}  // namespace

TEST(SyntheticCircles, ShapeAndFiniteness) {
  const PairedDataset d = synthetic_circles(500, 3);
  EXPECT_EQ(d.x.rows(), 500);
  EXPECT_EQ(d.y.rows(), 500);
  EXPECT_EQ(d.x.cols(), 2);
  EXPECT_EQ(d.y.cols(), 2);
  EXPECT_TRUE(d.x.allFinite());
  EXPECT_TRUE(d.y.allFinite());
  ASSERT_TRUE(d.latent.has_value());
  EXPECT_EQ(d.latent->rows(), 500);
}

TEST(SyntheticCircles, Deterministic) {
  const PairedDataset a = synthetic_circles(200, 11), b = synthetic_circles(200, 11);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  const PairedDataset c = synthetic_circles(200, 12);
  EXPECT_NE(a.x, c.x);
}

TEST(SyntheticCircles, PrefixStableInN) {
  const PairedDataset small = synthetic_circles(50, 4), large = synthetic_circles(80, 4);
  EXPECT_EQ(small.x, large.x.topRows(50));
  EXPECT_EQ(small.y, large.y.topRows(50));
}

TEST(SyntheticCircles, RadiiFollowLatentVariables) {
  const PairedDataset d = synthetic_circles(1000, 5);
  for (Index i = 0; i < d.n(); ++i) {
    const double u = (*d.latent)(i, 1), v = (*d.latent)(i, 2);
    ASSERT_GT(u / 1.5, 0.0);
    ASSERT_LE(u / 1.5, 1.0);
    ASSERT_GT(v / 4.1, 0.0);
    ASSERT_LE(v / 4.1, 1.0);
    const double rx2 = -4.0 * std::log(u / 1.5), ry2 = -4.0 * std::log(v / 4.1);
    EXPECT_GE(rx2, 0.0);
    EXPECT_GE(ry2, 0.0);
    EXPECT_NEAR(d.x.row(i).squaredNorm(), rx2, 1e-12 * std::max(1.0, rx2));
    EXPECT_NEAR(d.y.row(i).squaredNorm(), ry2, 1e-12 * std::max(1.0, ry2));
  }
}

TEST(SyntheticCircles, LatentMoments) {
  const PairedDataset d = synthetic_circles(100000, 2);
  const Vector u = d.latent->col(1), v = d.latent->col(2), z = d.latent->col(0);
  EXPECT_NEAR(u.mean(), 0.56, 0.01);
  EXPECT_NEAR(v.mean(), 3.5, 0.01);
  EXPECT_NEAR(z.mean(), 0.5, 0.01);
  // Noise variances 0.02 and 0.03 (resampling trims the tails slightly).
  EXPECT_NEAR((u - z).array().square().mean() - std::pow((u - z).mean(), 2), 0.02, 0.002);
  EXPECT_NEAR((v - z).array().square().mean() - std::pow((v - z).mean(), 2), 0.03, 0.003);
}

TEST(SyntheticCircles, RejectsEmpty) { EXPECT_THROW(synthetic_circles(0, 1), ConfigError); }

TEST(SplitSpec, ParsesCountsAndFractions) {
  const SplitSpec counts = SplitSpec::parse("6:2:2");
  EXPECT_FALSE(counts.fractions);
  EXPECT_EQ(counts.counts(10), (std::array<Index, 3>{6, 2, 2}));
  EXPECT_THROW(counts.counts(11), ConfigError);
  const SplitSpec frac = SplitSpec::parse("0.6:0.2:0.2");
  EXPECT_TRUE(frac.fractions);
  EXPECT_EQ(frac.counts(10), (std::array<Index, 3>{6, 2, 2}));
  EXPECT_EQ(frac.counts(11), (std::array<Index, 3>{7, 2, 2}));
}

TEST(SplitSpec, RejectsMalformed) {
  EXPECT_THROW(SplitSpec::parse("6:2"), ConfigError);
  EXPECT_THROW(SplitSpec::parse("a:2:2"), ConfigError);
  EXPECT_THROW(SplitSpec::parse("-1:2:2"), ConfigError);
  EXPECT_THROW(SplitSpec::parse("0:0:0"), ConfigError);
  EXPECT_THROW(SplitSpec::parse("1x:2:2"), ConfigError);
}

TEST(AssignSplits, DisjointAndExhaustive) {
  PairedDataset d = synthetic_circles(10, 1);
  assign_splits(d, SplitSpec::parse("6:2:2"), 7);
  const auto train = d.rows(Split::Train), tune = d.rows(Split::Tune), test = d.rows(Split::Test);
  EXPECT_EQ(train.size(), 6u);
  EXPECT_EQ(tune.size(), 2u);
  EXPECT_EQ(test.size(), 2u);
  std::set<Index> all(train.begin(), train.end());
  all.insert(tune.begin(), tune.end());
  all.insert(test.begin(), test.end());
  EXPECT_EQ(all.size(), 10u);
  EXPECT_EQ(d.x_of(Split::Tune).rows(), 2);
  EXPECT_EQ(d.y_of(Split::Test).row(0), d.y.row(test[0]));
}

TEST(AssignSplits, DeterministicBySeed) {
  PairedDataset a = synthetic_circles(40, 1), b = a, c = a;
  assign_splits(a, SplitSpec::parse("20:10:10"), 3);
  assign_splits(b, SplitSpec::parse("20:10:10"), 3);
  assign_splits(c, SplitSpec::parse("20:10:10"), 4);
  EXPECT_EQ(a.split, b.split);
  EXPECT_NE(a.split, c.split);
}

TEST(AssignSplits, UntaggedDataIsTraining) {
  const PairedDataset d = synthetic_circles(5, 1);
  EXPECT_EQ(d.rows(Split::Train).size(), 5u);
  EXPECT_TRUE(d.rows(Split::Test).empty());
}

TEST(Csv, RoundTrip) {
  const fs::path dir = temp_dir("roundtrip");
  const PairedDataset d = synthetic_circles(30, 9);
  write_csv((dir / "x.csv").string(), d.x);
  write_csv((dir / "y.csv").string(), d.y, {"a", "b"});
  EXPECT_EQ(read_csv((dir / "x.csv").string()), d.x);
  EXPECT_EQ(read_csv((dir / "y.csv").string()), d.y);
  const PairedDataset loaded =
      load_paired_csv((dir / "x.csv").string(), (dir / "y.csv").string(), SplitSpec::parse("20:5:5"), 2);
  EXPECT_EQ(loaded.x, d.x);
  EXPECT_EQ(loaded.y, d.y);
  EXPECT_EQ(loaded.rows(Split::Tune).size(), 5u);
  fs::remove_all(dir);
}

TEST(Csv, HeaderDetectionAndBlankLines) {
  const fs::path dir = temp_dir("header");
  write_text(dir / "a.csv", "p, q\n1, 2\n\n3,4\n");
  const Matrix m = read_csv((dir / "a.csv").string());
  ASSERT_EQ(m.rows(), 2);
  EXPECT_EQ(m(1, 1), 4.0);
  fs::remove_all(dir);
}

TEST(Csv, ErrorsCarryLineNumbers) {
  const fs::path dir = temp_dir("errors");
  write_text(dir / "bad.csv", "1,2\n3,oops\n");
  write_text(dir / "ragged.csv", "1,2\n3\n");
  write_text(dir / "nan.csv", "1,2\nnan,1\n");
  try {
    read_csv((dir / "bad.csv").string());
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(read_csv((dir / "ragged.csv").string()), ConfigError);
  EXPECT_THROW(read_csv((dir / "nan.csv").string()), ConfigError);
  EXPECT_THROW(read_csv((dir / "missing.csv").string()), ConfigError);
  fs::remove_all(dir);
}

TEST(Csv, RowCountMismatch) {
  const fs::path dir = temp_dir("mismatch");
  write_text(dir / "x.csv", "1\n2\n3\n");
  write_text(dir / "y.csv", "1\n2\n");
  EXPECT_THROW(load_paired_csv((dir / "x.csv").string(), (dir / "y.csv").string(), SplitSpec::parse("1:0:0"), 1),
               ConfigError);
  fs::remove_all(dir);
}
