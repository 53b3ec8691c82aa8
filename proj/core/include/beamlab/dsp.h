#pragma once

// Time-frequency analysis/synthesis and the log-fbank feature chain
// (fbank -> CMVN -> deltas -> subsampling, plus SpecAugment).
//
// All arithmetic is 64-bit. Every function is pure.

#include <complex>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace beamlab {

using cdouble = std::complex<double>;

// Sampled audio, samples[channel][n].
struct Waveform {
  int sample_rate = 16000;
  std::vector<std::vector<double>> samples;

  int num_channels() const { return static_cast<int>(samples.size()); }
  int num_samples() const {
    return samples.empty() ? 0 : static_cast<int>(samples.front().size());
  }

  static Waveform zeros(int channels, int n, int sample_rate);
  // Throws DataError if channels are ragged or samples are non-finite.
  void validate() const;
};

// Complex STFT tensor indexed (frame, bin, channel), channel fastest.
struct Spectrogram {
  int sample_rate = 16000;
  int window_size = 512;
  int hop = 128;
  int frames = 0;
  int bins = 0;
  int channels = 0;
  std::vector<cdouble> data;

  static Spectrogram zeros(int frames, int bins, int channels, int sample_rate,
                           int window_size, int hop);

  std::size_t index(int t, int f, int c) const {
    return (static_cast<std::size_t>(t) * bins + f) * channels + c;
  }
  cdouble& at(int t, int f, int c) { return data[index(t, f, c)]; }
  const cdouble& at(int t, int f, int c) const { return data[index(t, f, c)]; }

  // Copies a single channel out as a one-channel spectrogram.
  Spectrogram channel(int c) const;
};

enum class FeatureStage { kRawFbank, kNormalized, kDeltas, kSubsampled, kAugmented };

std::string to_string(FeatureStage stage);

// Real features, values[frame * dims + d].
struct FeatureMatrix {
  int frames = 0;
  int dims = 0;
  FeatureStage stage = FeatureStage::kRawFbank;
  std::vector<double> values;

  static FeatureMatrix zeros(int frames, int dims, FeatureStage stage);

  double& at(int t, int d) { return values[static_cast<std::size_t>(t) * dims + d]; }
  double at(int t, int d) const { return values[static_cast<std::size_t>(t) * dims + d]; }
};

struct StftConfig {
  int window_size = 512;
  int hop = 128;
};

// Periodic Hann window of length n.
std::vector<double> hann_window(int n);

// Frames are not center-padded: frames = floor((n - window) / hop) + 1.
Spectrogram stft(const Waveform& wave, int window_size = 512, int hop = 128);

// Weighted overlap-add with the analysis window as synthesis window and the
// constant COLA gain sum(w^2)/hop. Exact on the fully-overlapped interior for
// COLA-compliant hops (hop <= window/4 for Hann).
Waveform istft(const Spectrogram& spec);

inline constexpr double kLogFloor = 1e-10;
inline constexpr double kVarianceFloor = 1e-8;

// HTK mel scale triangles spanning 0 Hz to Nyquist, evaluated on the mel axis.
class MelFilterbank {
 public:
  MelFilterbank(int n_mels, int window_size, int sample_rate);

  int n_mels() const { return n_mels_; }
  int bins() const { return bins_; }
  double weight(int mel, int bin) const {
    return weights_[static_cast<std::size_t>(mel) * bins_ + bin];
  }

  static double hz_to_mel(double hz);
  static double mel_to_hz(double mel);

 private:
  int n_mels_;
  int bins_;
  std::vector<double> weights_;
};

// log(mel-weighted power + 1e-10). Requires a one-channel spectrogram.
FeatureMatrix log_fbank(const Spectrogram& spec, int n_mels = 40);
FeatureMatrix log_fbank(const Spectrogram& spec, const MelFilterbank& bank);

// Gradient w.r.t. the complex bins, in the convention
// g = dL/dRe + i dL/dIm, laid out like spec.data.
std::vector<cdouble> log_fbank_backward(const Spectrogram& spec,
                                        const MelFilterbank& bank,
                                        const FeatureMatrix& grad_out);

struct CmvnResult {
  FeatureMatrix normalized;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<bool> floored;  // variance clamped to kVarianceFloor
};

// Per-utterance, per-dimension mean/variance normalization (population
// variance). Needs at least two frames.
FeatureMatrix cmvn(const FeatureMatrix& feat);
CmvnResult cmvn_detailed(const FeatureMatrix& feat);
FeatureMatrix cmvn_backward(const CmvnResult& fwd, const FeatureMatrix& grad_out);

// Appends regression deltas and delta-deltas (window +-2, edge frames
// replicated). dims triple. Needs at least five frames.
FeatureMatrix add_deltas(const FeatureMatrix& feat);
FeatureMatrix add_deltas_backward(const FeatureMatrix& grad_out);

// Keeps frames 0, factor, 2*factor, ...
FeatureMatrix subsample(const FeatureMatrix& feat, int factor = 3);
FeatureMatrix subsample_backward(const FeatureMatrix& grad_out, int input_frames,
                                 int factor);

struct AugPolicy {
  int freq_masks = 0;
  int freq_width = 0;
  int time_masks = 0;
  int time_width = 0;
};

// Zeroes freq_masks bands of exactly freq_width dims and time_masks spans of
// exactly time_width frames at random offsets.
FeatureMatrix spec_augment(const FeatureMatrix& feat, const AugPolicy& policy,
                           std::mt19937_64& rng);

struct FeatureConfig {
  int n_mels = 40;
  int subsample = 3;
};

// Full single-channel chain: log fbank -> CMVN -> deltas -> subsample.
FeatureMatrix extract_features(const Spectrogram& spec, const FeatureConfig& cfg);

}  // namespace beamlab
