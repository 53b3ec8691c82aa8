#include "beamlab/backend.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <random>

#include "beamlab/error.h"
#include "test_util.h"

namespace beamlab {
namespace {

FeatureMatrix random_features(int frames, int dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  FeatureMatrix f = FeatureMatrix::zeros(frames, dims, FeatureStage::kSubsampled);
  for (double& v : f.values) v = g(rng);
  return f;
}

LogProbLattice random_lattice(int frames, int symbols, std::mt19937_64& rng, double spread = 1.5) {
  std::normal_distribution<double> g(0.0, spread);
  LogProbLattice lat = LogProbLattice::zeros(frames, symbols);
  for (int t = 0; t < frames; ++t) {
    double z = 0.0;
    for (int k = 0; k < symbols; ++k) z += std::exp(lat.at(t, k) = g(rng));
    for (int k = 0; k < symbols; ++k) lat.at(t, k) -= std::log(z);
  }
  return lat;
}

LogProbLattice uniform_lattice(int frames, int symbols) {
  LogProbLattice lat = LogProbLattice::zeros(frames, symbols);
  for (double& v : lat.values) v = -std::log(static_cast<double>(symbols));
  return lat;
}

double row_lse(const LogProbLattice& lat, int t) {
  double m = -INFINITY;
  for (int k = 0; k < lat.symbols; ++k) m = std::max(m, lat.at(t, k));
  double s = 0.0;
  for (int k = 0; k < lat.symbols; ++k) s += std::exp(lat.at(t, k) - m);
  return m + std::log(s);
}

TEST(AmForward, ZeroWeightsGiveUniformRows) {
  const AmParams p = AmParams::zeros(5, 3, 7, 4);
  const LogProbLattice lat = am_forward(random_features(9, 5, 1), p);
  ASSERT_EQ(lat.frames, 9);
  for (double v : lat.values) EXPECT_NEAR(v, -std::log(4.0), 1e-12);
}

TEST(AmForward, RowsNormalize) {
  std::mt19937_64 rng(3);
  const AmParams p = AmParams::random(6, 2, 10, 5, rng);
  const LogProbLattice lat = am_forward(random_features(15, 6, 2), p);
  for (int t = 0; t < lat.frames; ++t) EXPECT_NEAR(row_lse(lat, t), 0.0, 1e-6);
}

// Second implementation, element by element.
TEST(AmForward, MatchesLoopOracle) {
  std::mt19937_64 rng(5);
  const int D = 4, C = 3, H = 6, S = 4, T = 11;
  AmParams p = AmParams::random(D, C, H, S, rng);
  std::normal_distribution<double> g(0.0, 0.3);
  for (double& v : p.b1) v = g(rng);
  for (double& v : p.b2) v = g(rng);
  const FeatureMatrix f = random_features(T, D, 6);
  const LogProbLattice lat = am_forward(f, p);

  for (int t = 0; t < T; ++t) {
    std::vector<double> in;
    for (int k = -C; k <= C; ++k) {
      const int s = std::min(std::max(t + k, 0), T - 1);
      for (int d = 0; d < D; ++d) in.push_back(f.at(s, d));
    }
    std::vector<double> h(H);
    for (int j = 0; j < H; ++j) {
      double z = p.b1[j];
      for (std::size_t i = 0; i < in.size(); ++i) z += p.w1(j, i) * in[i];
      h[j] = std::tanh(z);
    }
    std::vector<double> o(S);
    double norm = 0.0;
    for (int k = 0; k < S; ++k) {
      o[k] = p.b2[k];
      for (int j = 0; j < H; ++j) o[k] += p.w2(k, j) * h[j];
      norm += std::exp(o[k]);
    }
    for (int k = 0; k < S; ++k) EXPECT_NEAR(lat.at(t, k), o[k] - std::log(norm), 1e-8);
  }
}

TEST(AmForward, DimensionMismatch) {
  EXPECT_THROW(am_forward(random_features(4, 3, 1), AmParams::zeros(5, 1, 2, 3)), DataError);
}

TEST(AmBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  AmParams p = AmParams::random(3, 1, 4, 3, rng);
  FeatureMatrix f = random_features(6, 3, 9);
  std::normal_distribution<double> g;
  LogProbLattice up = LogProbLattice::zeros(6, 3);
  for (double& v : up.values) v = g(rng);
  auto loss = [&] {
    const LogProbLattice lat = am_forward(f, p);
    double l = 0.0;
    for (std::size_t i = 0; i < lat.values.size(); ++i) l += up.values[i] * lat.values[i];
    return l;
  };
  AmCache cache;
  am_forward(f, p, &cache);
  const AmBackward b = am_backward(p, cache, up, f.frames);

  const double eps = 1e-6;
  auto check = [&](std::span<double> x, std::span<const double> analytic, const char* what) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + eps;
      const double lp = loss();
      x[i] = keep - eps;
      const double lm = loss();
      x[i] = keep;
      EXPECT_NEAR(analytic[i], (lp - lm) / (2 * eps), 1e-6 * (1 + std::abs(analytic[i])))
          << what << '[' << i << ']';
    }
  };
  const auto pv = p.views();
  const auto gv = b.grad.views();
  for (std::size_t k = 0; k < pv.size(); ++k) check(pv[k].values, gv[k].values, pv[k].name.c_str());
  check(f.values, b.grad_feat.values, "features");
}

TEST(Ctc, SingleFrameSingleLabel) {
  const CtcResult r = ctc_loss(uniform_lattice(1, 2), {1});
  EXPECT_NEAR(r.loss, std::log(2.0), 1e-12);
}

TEST(Ctc, TwoFramesThreePaths) {
  const CtcResult r = ctc_loss(uniform_lattice(2, 2), {1});
  EXPECT_NEAR(r.loss, -std::log(0.75), 1e-12);
}

TEST(Ctc, RepeatNeedsBlankSeparator) {
  std::mt19937_64 rng(1);
  const LogProbLattice lat = random_lattice(2, 2, rng);
  try {
    ctc_loss(lat, {1, 1});
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "no valid alignment");
  }
  EXPECT_NO_THROW(ctc_loss(random_lattice(3, 2, rng), {1, 1}));
  EXPECT_EQ(ctc_min_frames({1, 1}), 3);
  EXPECT_EQ(ctc_min_frames({1, 2, 2, 2}), 6);
  EXPECT_EQ(ctc_min_frames({}), 0);
}

TEST(Ctc, LabelOutsideVocabulary) {
  EXPECT_THROW(ctc_loss(uniform_lattice(4, 3), {3}), DataError);
  EXPECT_THROW(ctc_loss(uniform_lattice(4, 3), {0}), DataError);
}

// -log of the sum over every frame-level path whose collapse equals labels.
double brute_force_ctc(const LogProbLattice& lat, const LabelSequence& labels) {
  const int T = lat.frames, S = lat.symbols;
  std::vector<int> path(T, 0);
  double total = 0.0;
  std::function<void(int, double)> walk = [&](int t, double logp) {
    if (t == T) {
      if (collapse_path(path) == labels) total += std::exp(logp);
      return;
    }
    for (int k = 0; k < S; ++k) {
      path[t] = k;
      walk(t + 1, logp + lat.at(t, k));
    }
  };
  walk(0, 0.0);
  return -std::log(total);
}

TEST(Ctc, MatchesPathEnumeration) {
  std::mt19937_64 rng(11);
  int checked = 0;
  for (int V = 1; V <= 3; ++V)
    for (int T = 1; T <= 6; ++T)
      for (int len = 0; len <= 3; ++len)
        for (int rep = 0; rep < 3; ++rep) {
          LabelSequence l(len);
          std::uniform_int_distribution<int> tok(1, V);
          for (int& x : l) x = tok(rng);
          const LogProbLattice lat = random_lattice(T, V + 1, rng);
          if (ctc_min_frames(l) > T) {
            EXPECT_THROW(ctc_loss(lat, l), DataError);
            continue;
          }
          EXPECT_NEAR(ctc_loss(lat, l).loss, brute_force_ctc(lat, l), 1e-10)
              << "V=" << V << " T=" << T << " len=" << len;
          ++checked;
        }
  EXPECT_GT(checked, 100);
}

TEST(Ctc, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    LogProbLattice lat = random_lattice(5, 4, rng);
    const LabelSequence l{1, 3};
    const CtcResult r = ctc_loss(lat, l);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < lat.values.size(); ++i) {
      const double keep = lat.values[i];
      lat.values[i] = keep + eps;
      const double lp = ctc_loss(lat, l).loss;
      lat.values[i] = keep - eps;
      const double lm = ctc_loss(lat, l).loss;
      lat.values[i] = keep;
      const double fd = (lp - lm) / (2 * eps);
      EXPECT_LE(std::abs(r.grad.values[i] - fd), 1e-5 * std::max(1.0, std::abs(fd))) << i;
    }
  }
}

TEST(Ctc, VocabularyPermutationLeavesLossUnchanged) {
  std::mt19937_64 rng(17);
  const LogProbLattice lat = random_lattice(6, 4, rng);
  const LabelSequence l{1, 2, 3};
  const std::vector<int> perm{0, 3, 1, 2};  // blank stays put
  LogProbLattice moved = LogProbLattice::zeros(6, 4);
  for (int t = 0; t < 6; ++t)
    for (int k = 0; k < 4; ++k) moved.at(t, perm[k]) = lat.at(t, k);
  LabelSequence ml;
  for (int x : l) ml.push_back(perm[x]);
  EXPECT_NEAR(ctc_loss(lat, l).loss, ctc_loss(moved, ml).loss, 1e-12);
}

LogProbLattice sharp_lattice(const std::vector<int>& path, int symbols) {
  LogProbLattice lat = LogProbLattice::zeros(static_cast<int>(path.size()), symbols);
  for (int t = 0; t < lat.frames; ++t)
    for (int k = 0; k < symbols; ++k) lat.at(t, k) = k == path[t] ? -1e-3 : -8.0;
  return lat;
}

TEST(GreedyDecode, Examples) {
  EXPECT_EQ(greedy_decode(sharp_lattice({0, 1, 1, 0, 2}, 3)), (LabelSequence{1, 2}));
  EXPECT_EQ(greedy_decode(sharp_lattice({0, 0, 0}, 3)), LabelSequence{});
  EXPECT_EQ(greedy_decode(sharp_lattice({1, 0, 1}, 3)), (LabelSequence{1, 1}));
}

TEST(GreedyDecode, SharpExpansionRecoversLabels) {
  std::mt19937_64 rng(19);
  std::uniform_int_distribution<int> tok(1, 4), extra(0, 2);
  for (int trial = 0; trial < 50; ++trial) {
    LabelSequence l(1 + trial % 5);
    for (int& x : l) x = tok(rng);
    std::vector<int> path;
    for (std::size_t i = 0; i < l.size(); ++i) {
      for (int b = extra(rng); b > 0; --b) path.push_back(kBlank);
      if (i > 0 && l[i] == l[i - 1]) path.push_back(kBlank);
      for (int r = 1 + extra(rng); r > 0; --r) path.push_back(l[i]);
    }
    EXPECT_EQ(greedy_decode(sharp_lattice(path, 5)), l);
  }
}

TEST(EditDistance, Examples) {
  const EditCounts same = edit_distance({1, 2, 3}, {1, 2, 3});
  EXPECT_EQ(same.total(), 0);
  const EditCounts sub = edit_distance({1, 9, 3}, {1, 2, 3});
  EXPECT_EQ(sub.substitutions, 1);
  EXPECT_EQ(sub.total(), 1);
  const EditCounts ins = edit_distance({1, 2, 3, 4}, {1, 2, 3});
  EXPECT_EQ(ins.insertions, 1);
  EXPECT_EQ(ins.total(), 1);
  const EditCounts del = edit_distance({}, {1, 2});
  EXPECT_EQ(del.deletions, 2);
  // One substitution beats an insertion plus a deletion.
  const EditCounts tie = edit_distance({2}, {1});
  EXPECT_EQ(tie.substitutions, 1);
  EXPECT_EQ(tie.insertions + tie.deletions, 0);
}

// Minimum over every alignment, no memoization.
int exhaustive_cost(const LabelSequence& a, std::size_t i, const LabelSequence& b, std::size_t j) {
  if (i == a.size()) return static_cast<int>(b.size() - j);
  if (j == b.size()) return static_cast<int>(a.size() - i);
  return std::min({exhaustive_cost(a, i + 1, b, j + 1) + (a[i] == b[j] ? 0 : 1),
                   exhaustive_cost(a, i + 1, b, j) + 1, exhaustive_cost(a, i, b, j + 1) + 1});
}

TEST(EditDistance, MatchesExhaustiveAlignment) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> len(0, 6), tok(1, 3);
  for (int trial = 0; trial < 300; ++trial) {
    LabelSequence h(len(rng)), r(len(rng));
    for (int& x : h) x = tok(rng);
    for (int& x : r) x = tok(rng);
    const EditCounts e = edit_distance(h, r);
    EXPECT_EQ(e.total(), exhaustive_cost(h, 0, r, 0));
    // Counts are consistent with the lengths.
    EXPECT_EQ(static_cast<int>(h.size()) - e.insertions, static_cast<int>(r.size()) - e.deletions);
  }
}

TEST(Vocabulary, RoundTrip) {
  testing::TempDir dir("vocab");
  const std::vector<std::string> tokens{"alpha", "beta", "gamma"};
  write_vocabulary(dir.file("v.txt"), tokens);
  EXPECT_EQ(read_vocabulary(dir.file("v.txt")), tokens);
}

TEST(Vocabulary, Errors) {
  testing::TempDir dir("vocab");
  EXPECT_THROW(read_vocabulary(dir.file("missing.txt")), DataError);
  std::ofstream(dir.file("gap.txt")) << "a\n\nb\n";
  EXPECT_THROW(read_vocabulary(dir.file("gap.txt")), DataError);
}

}  // namespace
}  // namespace beamlab
