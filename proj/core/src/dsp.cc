#include "beamlab/dsp.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

#include "beamlab/error.h"

namespace beamlab {

Waveform Waveform::zeros(int channels, int n, int sample_rate) {
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(channels, std::vector<double>(n, 0.0));
  return w;
}

void Waveform::validate() const {
  if (samples.empty()) throw DataError("waveform has no channels");
  const std::size_t n = samples.front().size();
  for (const auto& ch : samples) {
    if (ch.size() != n) throw DataError("waveform channels differ in length");
    for (double v : ch) {
      if (!std::isfinite(v)) throw DataError("waveform contains non-finite samples");
    }
  }
  if (sample_rate <= 0) throw DataError("waveform sample rate must be positive");
}

Spectrogram Spectrogram::zeros(int frames, int bins, int channels, int sample_rate,
                               int window_size, int hop) {
  Spectrogram s;
  s.frames = frames;
  s.bins = bins;
  s.channels = channels;
  s.sample_rate = sample_rate;
  s.window_size = window_size;
  s.hop = hop;
  s.data.assign(static_cast<std::size_t>(frames) * bins * channels, cdouble{});
  return s;
}

Spectrogram Spectrogram::channel(int c) const {
  if (c < 0 || c >= channels) throw DataError("channel index out of range");
  Spectrogram out = zeros(frames, bins, 1, sample_rate, window_size, hop);
  for (int t = 0; t < frames; ++t)
    for (int f = 0; f < bins; ++f) out.at(t, f, 0) = at(t, f, c);
  return out;
}

std::string to_string(FeatureStage stage) {
  switch (stage) {
    case FeatureStage::kRawFbank: return "raw-fbank";
    case FeatureStage::kNormalized: return "normalized";
    case FeatureStage::kDeltas: return "deltas";
    case FeatureStage::kSubsampled: return "subsampled";
    case FeatureStage::kAugmented: return "augmented";
  }
  return "unknown";
}

FeatureMatrix FeatureMatrix::zeros(int frames, int dims, FeatureStage stage) {
  FeatureMatrix m;
  m.frames = frames;
  m.dims = dims;
  m.stage = stage;
  m.values.assign(static_cast<std::size_t>(frames) * dims, 0.0);
  return m;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  return w;
}

namespace {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

}  // namespace

Spectrogram stft(const Waveform& wave, int window_size, int hop) {
  if (!is_power_of_two(window_size))
    throw DataError("stft window size must be a power of two");
  if (hop <= 0 || hop > window_size) throw DataError("stft hop must be in (0, window]");
  wave.validate();
  const int n = wave.num_samples();
  if (n < window_size) throw DataError("input too short");

  const int frames = (n - window_size) / hop + 1;
  const int bins = window_size / 2 + 1;
  Spectrogram spec = Spectrogram::zeros(frames, bins, wave.num_channels(),
                                        wave.sample_rate, window_size, hop);
  const std::vector<double> window = hann_window(window_size);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(window_size);
  std::vector<cdouble> out;
  for (int c = 0; c < wave.num_channels(); ++c) {
    const auto& x = wave.samples[c];
    for (int t = 0; t < frames; ++t) {
      const std::size_t start = static_cast<std::size_t>(t) * hop;
      for (int i = 0; i < window_size; ++i) frame[i] = x[start + i] * window[i];
      fft.fwd(out, frame);
      for (int f = 0; f < bins; ++f) spec.at(t, f, c) = out[f];
    }
  }
  return spec;
}

Waveform istft(const Spectrogram& spec) {
  if (spec.channels != 1) throw DataError("istft expects a single-channel spectrogram");
  const int n_win = spec.window_size;
  if (spec.bins != n_win / 2 + 1) throw DataError("spectrogram bins do not match window size");
  const std::vector<double> window = hann_window(n_win);

  double energy = 0.0;
  for (double w : window) energy += w * w;
  const double cola_gain = energy / spec.hop;

  const int n_out = spec.frames == 0 ? 0 : (spec.frames - 1) * spec.hop + n_win;
  Waveform wave = Waveform::zeros(1, n_out, spec.sample_rate);
  auto& y = wave.samples[0];

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<cdouble> half(spec.bins);
  std::vector<double> frame;
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < spec.bins; ++f) half[f] = spec.at(t, f, 0);
    fft.inv(frame, half, n_win);
    const std::size_t start = static_cast<std::size_t>(t) * spec.hop;
    for (int i = 0; i < n_win; ++i) y[start + i] += frame[i] * window[i] / cola_gain;
  }
  return wave;
}

double MelFilterbank::hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double MelFilterbank::mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

MelFilterbank::MelFilterbank(int n_mels, int window_size, int sample_rate)
    : n_mels_(n_mels), bins_(window_size / 2 + 1) {
  if (n_mels <= 0) throw DataError("n_mels must be positive");
  weights_.assign(static_cast<std::size_t>(n_mels) * bins_, 0.0);
  const double mel_max = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_max * i / (n_mels + 1);

  for (int k = 0; k < bins_; ++k) {
    const double mel = hz_to_mel(static_cast<double>(k) * sample_rate / window_size);
    for (int j = 0; j < n_mels; ++j) {
      const double left = edges[j], center = edges[j + 1], right = edges[j + 2];
      double w = 0.0;
      if (mel > left && mel < center) {
        w = (mel - left) / (center - left);
      } else if (mel >= center && mel < right) {
        w = (right - mel) / (right - center);
      }
      weights_[static_cast<std::size_t>(j) * bins_ + k] = w;
    }
  }
}

FeatureMatrix log_fbank(const Spectrogram& spec, int n_mels) {
  return log_fbank(spec, MelFilterbank(n_mels, spec.window_size, spec.sample_rate));
}

FeatureMatrix log_fbank(const Spectrogram& spec, const MelFilterbank& bank) {
  if (spec.channels != 1) throw DataError("log_fbank expects a single-channel spectrogram");
  if (spec.bins != bank.bins()) throw DataError("filterbank does not match spectrogram bins");
  FeatureMatrix out = FeatureMatrix::zeros(spec.frames, bank.n_mels(), FeatureStage::kRawFbank);
  std::vector<double> power(spec.bins);
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < spec.bins; ++f) power[f] = std::norm(spec.at(t, f, 0));
    for (int j = 0; j < bank.n_mels(); ++j) {
      double e = 0.0;
      for (int f = 0; f < spec.bins; ++f) e += bank.weight(j, f) * power[f];
      out.at(t, j) = std::log(e + kLogFloor);
    }
  }
  return out;
}

std::vector<cdouble> log_fbank_backward(const Spectrogram& spec, const MelFilterbank& bank,
                                        const FeatureMatrix& grad_out) {
  std::vector<cdouble> grad(spec.data.size());
  std::vector<double> power(spec.bins), grad_energy(bank.n_mels());
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < spec.bins; ++f) power[f] = std::norm(spec.at(t, f, 0));
    for (int j = 0; j < bank.n_mels(); ++j) {
      double e = 0.0;
      for (int f = 0; f < spec.bins; ++f) e += bank.weight(j, f) * power[f];
      grad_energy[j] = grad_out.at(t, j) / (e + kLogFloor);
    }
    for (int f = 0; f < spec.bins; ++f) {
      double grad_power = 0.0;
      for (int j = 0; j < bank.n_mels(); ++j) grad_power += bank.weight(j, f) * grad_energy[j];
      // d|y|^2 = 2 Re(conj(y) dy)
      grad[spec.index(t, f, 0)] = 2.0 * grad_power * spec.at(t, f, 0);
    }
  }
  return grad;
}

CmvnResult cmvn_detailed(const FeatureMatrix& feat) {
  if (feat.frames < 2) throw DataError("insufficient frames");
  CmvnResult r;
  r.normalized = FeatureMatrix::zeros(feat.frames, feat.dims, FeatureStage::kNormalized);
  r.mean.assign(feat.dims, 0.0);
  r.stddev.assign(feat.dims, 0.0);
  r.floored.assign(feat.dims, false);
  for (int d = 0; d < feat.dims; ++d) {
    double mean = 0.0;
    for (int t = 0; t < feat.frames; ++t) mean += feat.at(t, d);
    mean /= feat.frames;
    double var = 0.0;
    for (int t = 0; t < feat.frames; ++t) {
      const double c = feat.at(t, d) - mean;
      var += c * c;
    }
    var /= feat.frames;
    if (var < kVarianceFloor) {
      var = kVarianceFloor;
      r.floored[d] = true;
    }
    const double sd = std::sqrt(var);
    r.mean[d] = mean;
    r.stddev[d] = sd;
    for (int t = 0; t < feat.frames; ++t) r.normalized.at(t, d) = (feat.at(t, d) - mean) / sd;
  }
  return r;
}

FeatureMatrix cmvn(const FeatureMatrix& feat) { return cmvn_detailed(feat).normalized; }

FeatureMatrix cmvn_backward(const CmvnResult& fwd, const FeatureMatrix& grad_out) {
  const FeatureMatrix& z = fwd.normalized;
  FeatureMatrix g = FeatureMatrix::zeros(z.frames, z.dims, FeatureStage::kRawFbank);
  const double inv_n = 1.0 / z.frames;
  for (int d = 0; d < z.dims; ++d) {
    double mean_g = 0.0, mean_gz = 0.0;
    for (int t = 0; t < z.frames; ++t) {
      mean_g += grad_out.at(t, d);
      mean_gz += grad_out.at(t, d) * z.at(t, d);
    }
    mean_g *= inv_n;
    mean_gz *= inv_n;
    // A floored variance is a constant, so only the mean path remains.
    if (fwd.floored[d]) mean_gz = 0.0;
    for (int t = 0; t < z.frames; ++t) {
      g.at(t, d) = (grad_out.at(t, d) - mean_g - z.at(t, d) * mean_gz) / fwd.stddev[d];
    }
  }
  return g;
}

namespace {

constexpr int kDeltaWindow = 2;

// out[:, out_offset + d] = regression delta of in[:, in_offset + d]
void regression_delta(const FeatureMatrix& in, int in_offset, int width, FeatureMatrix& out,
                      int out_offset) {
  double denom = 0.0;
  for (int n = 1; n <= kDeltaWindow; ++n) denom += 2.0 * n * n;
  const int last = in.frames - 1;
  for (int t = 0; t < in.frames; ++t) {
    for (int d = 0; d < width; ++d) {
      double acc = 0.0;
      for (int n = 1; n <= kDeltaWindow; ++n) {
        const int ahead = std::min(t + n, last);
        const int behind = std::max(t - n, 0);
        acc += n * (in.at(ahead, in_offset + d) - in.at(behind, in_offset + d));
      }
      out.at(t, out_offset + d) = acc / denom;
    }
  }
}

// Transpose of regression_delta, accumulated into out.
void regression_delta_transpose(const FeatureMatrix& g, int g_offset, int width,
                                FeatureMatrix& out, int out_offset) {
  double denom = 0.0;
  for (int n = 1; n <= kDeltaWindow; ++n) denom += 2.0 * n * n;
  const int last = g.frames - 1;
  for (int t = 0; t < g.frames; ++t) {
    for (int d = 0; d < width; ++d) {
      const double v = g.at(t, g_offset + d) / denom;
      for (int n = 1; n <= kDeltaWindow; ++n) {
        out.at(std::min(t + n, last), out_offset + d) += n * v;
        out.at(std::max(t - n, 0), out_offset + d) -= n * v;
      }
    }
  }
}

}  // namespace

FeatureMatrix add_deltas(const FeatureMatrix& feat) {
  if (feat.frames < 2 * kDeltaWindow + 1) throw DataError("add_deltas needs at least 5 frames");
  const int base = feat.dims;
  FeatureMatrix out = FeatureMatrix::zeros(feat.frames, 3 * base, FeatureStage::kDeltas);
  for (int t = 0; t < feat.frames; ++t)
    for (int d = 0; d < base; ++d) out.at(t, d) = feat.at(t, d);
  regression_delta(out, 0, base, out, base);
  regression_delta(out, base, base, out, 2 * base);
  return out;
}

FeatureMatrix add_deltas_backward(const FeatureMatrix& grad_out) {
  if (grad_out.dims % 3 != 0) throw DataError("delta gradient dims must be a multiple of 3");
  const int base = grad_out.dims / 3;
  // Work on a copy so that the delta-delta adjoint can flow into the delta block.
  FeatureMatrix g = grad_out;
  regression_delta_transpose(grad_out, 2 * base, base, g, base);
  FeatureMatrix out = FeatureMatrix::zeros(grad_out.frames, base, FeatureStage::kNormalized);
  for (int t = 0; t < g.frames; ++t)
    for (int d = 0; d < base; ++d) out.at(t, d) = g.at(t, d);
  regression_delta_transpose(g, base, base, out, 0);
  return out;
}

FeatureMatrix subsample(const FeatureMatrix& feat, int factor) {
  if (factor < 1) throw DataError("subsample factor must be >= 1");
  const int frames = (feat.frames + factor - 1) / factor;
  FeatureMatrix out = FeatureMatrix::zeros(frames, feat.dims, FeatureStage::kSubsampled);
  for (int i = 0; i < frames; ++i)
    for (int d = 0; d < feat.dims; ++d) out.at(i, d) = feat.at(i * factor, d);
  return out;
}

FeatureMatrix subsample_backward(const FeatureMatrix& grad_out, int input_frames, int factor) {
  FeatureMatrix g = FeatureMatrix::zeros(input_frames, grad_out.dims, FeatureStage::kDeltas);
  for (int i = 0; i < grad_out.frames; ++i)
    for (int d = 0; d < grad_out.dims; ++d) g.at(i * factor, d) = grad_out.at(i, d);
  return g;
}

FeatureMatrix spec_augment(const FeatureMatrix& feat, const AugPolicy& policy,
                           std::mt19937_64& rng) {
  if (policy.freq_masks < 0 || policy.time_masks < 0 || policy.freq_width < 0 ||
      policy.time_width < 0)
    throw DataError("SpecAugment policy fields must be non-negative");
  if (policy.freq_masks > 0 && policy.freq_width >= feat.dims)
    throw DataError("frequency mask wider than feature dims");
  if (policy.time_masks > 0 && policy.time_width >= feat.frames)
    throw DataError("time mask wider than utterance");

  FeatureMatrix out = feat;
  if (policy.freq_masks == 0 && policy.time_masks == 0) return out;
  out.stage = FeatureStage::kAugmented;
  for (int i = 0; i < policy.freq_masks; ++i) {
    std::uniform_int_distribution<int> start(0, feat.dims - policy.freq_width);
    const int s = start(rng);
    for (int t = 0; t < out.frames; ++t)
      for (int d = s; d < s + policy.freq_width; ++d) out.at(t, d) = 0.0;
  }
  for (int i = 0; i < policy.time_masks; ++i) {
    std::uniform_int_distribution<int> start(0, feat.frames - policy.time_width);
    const int s = start(rng);
    for (int t = s; t < s + policy.time_width; ++t)
      for (int d = 0; d < out.dims; ++d) out.at(t, d) = 0.0;
  }
  return out;
}

FeatureMatrix extract_features(const Spectrogram& spec, const FeatureConfig& cfg) {
  return subsample(add_deltas(cmvn(log_fbank(spec, cfg.n_mels))), cfg.subsample);
}

}  // namespace beamlab
