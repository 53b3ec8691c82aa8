#pragma once

// The jointly optimized recognition path
//
//   mask net -> speech/noise masks -> PSDs -> MVDR -> beamformed STFT
//            -> log fbank -> CMVN -> deltas -> subsample -> AM -> CTC
//
// with a hand-written reverse pass and a finite-difference verifier.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "beamlab/backend.h"
#include "beamlab/beamform.h"
#include "beamlab/dsp.h"

namespace beamlab {

// Per-(t,f) classifier over the standardized log power of the reference
// channel at bins f-1, f, f+1 (edges replicated): tanh hidden layer, sigmoid
// output giving the speech mask.
struct MaskNetParams {
  static constexpr int kInputs = 3;

  int hidden = 0;
  RowMatrix w1;        // hidden x kInputs
  Eigen::VectorXd b1;  // hidden
  Eigen::VectorXd w2;  // hidden
  Eigen::VectorXd b2;  // 1

  static MaskNetParams zeros(int hidden);
  static MaskNetParams random(int hidden, std::mt19937_64& rng);

  std::vector<ParamView> views();
  std::vector<ConstParamView> views() const;
};

struct JointModelConfig {
  int vocab_size = 4;  // tokens, blank excluded
  FeatureConfig features;
  MvdrOptions mvdr;
  int mask_hidden = 8;
  int am_context = 3;
  int am_hidden = 32;

  int am_input_dims() const { return 3 * features.n_mels; }
};

struct TrainState {
  JointModelConfig model;
  MaskNetParams mask;
  AmParams am;
  // Plain SGD keeps no moments; the slot exists so checkpoints can carry them.
  std::vector<std::vector<double>> optimizer_moments;
  std::int64_t step = 0;
  std::uint64_t seed = 0;

  static TrainState initialize(const JointModelConfig& model, std::uint64_t seed);

  std::vector<ParamView> views();
  std::vector<ConstParamView> views() const;
  std::size_t num_parameters() const;
};

struct GradBundle {
  MaskNetParams mask;
  AmParams am;

  static GradBundle zeros_like(const TrainState& state);

  std::vector<ParamView> views();
  std::vector<ConstParamView> views() const;
  void add(const GradBundle& other, double scale = 1.0);
  bool all_finite() const;
};

struct JointOptions {
  // Bypasses the mask net with fixed speech masks (noise = 1 - speech).
  std::optional<TFMask> fixed_speech_mask;
  // Overrides the reference microphone (otherwise: highest observed power).
  std::optional<int> ref_channel;
  // Test hook: perturbs the PSD adjoint so gradient checks must fail.
  bool corrupt_adjoint = false;
};

struct JointCache;

struct JointForward {
  double loss = 0.0;
  LogProbLattice lattice;
  int ref_channel = 0;
  std::shared_ptr<const JointCache> cache;
};

// Reference microphone used when none is forced: select_reference applied to
// the unmasked observation PSDs.
int observation_reference(const Spectrogram& utt);

// Standardized log power of channel `ref` stacked over bins f-1, f, f+1;
// row t * bins + f.
RowMatrix mask_net_inputs(const Spectrogram& utt, int ref);

// Speech mask from the mask net for every (t, f).
TFMask mask_net_forward(const MaskNetParams& params, const RowMatrix& inputs, int frames,
                        int bins, RowMatrix* hidden = nullptr);

struct FrontEndOutput {
  int ref_channel = 0;
  TFMask speech_mask;
  PsdPair psd;
  BeamWeights weights;
  Spectrogram enhanced;
};

// Mask estimation and MVDR beamforming only.
FrontEndOutput frontend_forward(const TrainState& state, const Spectrogram& utt,
                                const JointOptions& opts = {});

// Front-end then features, AM and CTC. `utt` must outlive the returned cache.
JointForward forward_joint(const TrainState& state, const Spectrogram& utt,
                           const LabelSequence& labels, const JointOptions& opts = {});

// Exact reverse pass; `upstream` scales dL.
GradBundle backward_joint(const JointForward& fwd, double upstream = 1.0);

// Decodes a multi-channel utterance through the front-end and AM.
LabelSequence decode_joint(const TrainState& state, const Spectrogram& utt);

struct BackendStep {
  double loss = 0.0;
  AmParams grad;
};

// Single-channel path with the front-end bypassed: features -> AM -> CTC.
BackendStep backend_loss_and_grad(const AmParams& am, const FeatureMatrix& features,
                                  const LabelSequence& labels);

struct GradCheckGroup {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckGroup> groups;

  std::string format() const;
};

// Relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradCheckFloor = 1e-6;

// Central differences over every element of `params` against `analytic`.
// `loss` is evaluated with the parameters perturbed in place.
GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const ParamView> params,
                                  std::span<const ConstParamView> analytic, double epsilon);

// Whole joint path; the reference microphone is frozen at its unperturbed
// choice.
GradCheckReport finite_diff_check(TrainState state, const Spectrogram& utt,
                                  const LabelSequence& labels, double epsilon,
                                  const JointOptions& opts = {});

// JSON container of a TrainState; doubles round-trip exactly.
inline constexpr int kCheckpointVersion = 1;
std::string checkpoint_to_json(const TrainState& state);
TrainState checkpoint_from_json(const std::string& text);
void save_checkpoint(const std::string& path, const TrainState& state);
TrainState load_checkpoint(const std::string& path);

}  // namespace beamlab
