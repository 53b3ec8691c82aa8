#pragma once

// Recognition back-end: a context-window feed-forward acoustic model, exact
// CTC loss in log space, greedy decoding and edit-distance scoring.

#include <Eigen/Dense>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "beamlab/dsp.h"

namespace beamlab {

inline constexpr int kBlank = 0;

// Token ids in [1, V]; id 0 is the blank and never appears here.
using LabelSequence = std::vector<int>;

// Per-frame log-probabilities over {blank} + V tokens.
struct LogProbLattice {
  int frames = 0;
  int symbols = 0;  // V + 1
  std::vector<double> values;

  static LogProbLattice zeros(int frames, int symbols);

  double& at(int t, int k) { return values[static_cast<std::size_t>(t) * symbols + k]; }
  double at(int t, int k) const { return values[static_cast<std::size_t>(t) * symbols + k]; }
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// A named view onto one trainable array.
struct ParamView {
  std::string name;
  std::span<double> values;
};

struct ConstParamView {
  std::string name;
  std::span<const double> values;
};

// affine -> tanh -> affine -> log-softmax over +-context stacked frames.
struct AmParams {
  int input_dims = 0;
  int context = 3;
  int hidden = 0;
  int symbols = 0;
  RowMatrix w1;  // hidden x (2 context + 1) input_dims
  Eigen::VectorXd b1;
  RowMatrix w2;  // symbols x hidden
  Eigen::VectorXd b2;

  static AmParams zeros(int input_dims, int context, int hidden, int symbols);
  static AmParams random(int input_dims, int context, int hidden, int symbols,
                         std::mt19937_64& rng);

  int window_dims() const { return (2 * context + 1) * input_dims; }
  std::vector<ParamView> views();
  std::vector<ConstParamView> views() const;
};

struct AmCache {
  RowMatrix inputs;   // frames x window_dims
  RowMatrix hidden;   // frames x hidden, post-tanh
  RowMatrix softmax;  // frames x symbols
};

LogProbLattice am_forward(const FeatureMatrix& feat, const AmParams& params,
                          AmCache* cache = nullptr);

struct AmBackward {
  AmParams grad;            // same shapes as the parameters
  FeatureMatrix grad_feat;  // dL/dfeatures
};

AmBackward am_backward(const AmParams& params, const AmCache& cache,
                       const LogProbLattice& grad_lattice, int feature_frames);

struct CtcResult {
  double loss = 0.0;
  LogProbLattice grad;  // dloss / dlattice
};

// Minimum number of frames an alignment of `labels` needs (one per label plus
// a blank between equal neighbours).
int ctc_min_frames(const LabelSequence& labels);

// -log p(labels | lattice) by the forward-backward recursion. Throws
// DataError("no valid alignment") when the lattice is too short.
CtcResult ctc_loss(const LogProbLattice& lattice, const LabelSequence& labels);

// Per-frame argmax followed by collapsing repeats and dropping blanks.
LabelSequence greedy_decode(const LogProbLattice& lattice);

// Collapse repeats, then drop blanks.
LabelSequence collapse_path(std::span<const int> path);

struct EditCounts {
  int substitutions = 0;
  int insertions = 0;
  int deletions = 0;

  int total() const { return substitutions + insertions + deletions; }
};

// Unit-cost Levenshtein alignment of hyp against ref. Among equal-cost
// alignments the backtrace prefers substitution, then deletion, then insertion.
EditCounts edit_distance(const LabelSequence& hyp, const LabelSequence& ref);

// One token per line; line i (0-based) has id i + 1.
std::vector<std::string> read_vocabulary(const std::string& path);
void write_vocabulary(const std::string& path, const std::vector<std::string>& tokens);

}  // namespace beamlab
