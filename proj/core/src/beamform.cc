#include "beamlab/beamform.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "beamlab/error.h"

namespace beamlab {

TFMask TFMask::filled(int frames, int bins, double value, MaskTarget target) {
  TFMask m;
  m.frames = frames;
  m.bins = bins;
  m.target = target;
  m.values.assign(static_cast<std::size_t>(frames) * bins, value);
  return m;
}

TFMask TFMask::complement() const {
  TFMask m = *this;
  m.target = target == MaskTarget::kSpeech ? MaskTarget::kNoise : MaskTarget::kSpeech;
  for (double& v : m.values) v = 1.0 - v;
  return m;
}

BeamWeights BeamWeights::one_hot(int bins, int channels, int ref) {
  BeamWeights w;
  w.ref_channel = ref;
  w.h.assign(bins, CVector::Zero(channels));
  for (auto& h : w.h) h(ref) = 1.0;
  return w;
}

std::pair<TFMask, TFMask> oracle_masks(const Spectrogram& clean, const Spectrogram& noise,
                                       int ref_channel) {
  if (clean.frames != noise.frames || clean.bins != noise.bins ||
      clean.channels != noise.channels)
    throw DataError("oracle_masks: clean and noise spectrogram shapes differ");
  if (ref_channel < 0 || ref_channel >= clean.channels)
    throw DataError("oracle_masks: reference channel out of range");

  TFMask speech = TFMask::filled(clean.frames, clean.bins, 0.0, MaskTarget::kSpeech);
  for (int t = 0; t < clean.frames; ++t) {
    for (int f = 0; f < clean.bins; ++f) {
      const double ps = std::norm(clean.at(t, f, ref_channel));
      const double pn = std::norm(noise.at(t, f, ref_channel));
      speech.at(t, f) = ps / (ps + pn + kMaskEpsilon);
    }
  }
  TFMask noise_mask = speech.complement();
  return {std::move(speech), std::move(noise_mask)};
}

PsdSet estimate_psd(const Spectrogram& spec, const TFMask& mask) {
  if (mask.frames != spec.frames || mask.bins != spec.bins)
    throw DataError("estimate_psd: mask shape does not match spectrogram");
  const int C = spec.channels;
  PsdSet psd(spec.bins, CMatrix::Zero(C, C));
  CVector x(C);
  for (int f = 0; f < spec.bins; ++f) {
    CMatrix& phi = psd[f];
    double mass = 0.0;
    for (int t = 0; t < spec.frames; ++t) {
      const double m = mask.at(t, f);
      mass += m;
      for (int c = 0; c < C; ++c) x(c) = spec.at(t, f, c);
      phi.noalias() += m * (x * x.adjoint());
    }
    phi /= std::max(mass, kMaskEpsilon);
  }
  return psd;
}

std::vector<double> estimate_psd_backward(const Spectrogram& spec, const TFMask& mask,
                                          const PsdSet& psd, const PsdSet& grad_psd) {
  const int C = spec.channels;
  std::vector<double> grad(mask.values.size(), 0.0);
  CVector x(C);
  for (int f = 0; f < spec.bins; ++f) {
    double mass = 0.0;
    for (int t = 0; t < spec.frames; ++t) mass += mask.at(t, f);
    const CMatrix& g = grad_psd[f];
    const bool floored = mass <= kMaskEpsilon;
    const double denom = floored ? kMaskEpsilon : mass;
    // Re tr(G^H Phi) is the adjoint of the normalizer.
    const double baseline = floored ? 0.0 : (g.adjoint() * psd[f]).trace().real();
    for (int t = 0; t < spec.frames; ++t) {
      for (int c = 0; c < C; ++c) x(c) = spec.at(t, f, c);
      const double quad = (x.adjoint() * g * x)(0, 0).real();
      grad[static_cast<std::size_t>(t) * spec.bins + f] = (quad - baseline) / denom;
    }
  }
  return grad;
}

namespace {

void check_hermitian(const CMatrix& phi, double tol) {
  const double scale = std::max(1.0, phi.cwiseAbs().maxCoeff());
  if ((phi - phi.adjoint()).cwiseAbs().maxCoeff() > tol * scale)
    throw DataError("invalid PSD: matrix is not Hermitian");
  if (!phi.allFinite()) throw DataError("invalid PSD: non-finite entries");
}

struct MvdrBin {
  CMatrix loaded;  // Phi_NN + lambda I
  CMatrix a;       // loaded^-1 Phi_SS
  cdouble trace;
  bool loading_floored = false;
};

MvdrBin solve_bin(const CMatrix& phi_ss, const CMatrix& phi_nn, const MvdrOptions& opts) {
  const int C = static_cast<int>(phi_nn.rows());
  MvdrBin bin;
  double noise_power = phi_nn.trace().real() / C;
  if (noise_power < opts.min_noise_power) {
    noise_power = opts.min_noise_power;
    bin.loading_floored = true;
  }
  bin.loaded = phi_nn;
  bin.loaded.diagonal().array() += opts.loading * noise_power;
  bin.a = bin.loaded.partialPivLu().solve(phi_ss);
  bin.trace = bin.a.trace();
  return bin;
}

bool degenerate_trace(const MvdrBin& bin) {
  const double scale = bin.a.cwiseAbs().maxCoeff();
  return std::abs(bin.trace) <= 1e-12 * scale || std::abs(bin.trace) == 0.0;
}

void check_pair(const PsdPair& psd, int ref_channel, const MvdrOptions& opts) {
  if (psd.phi_ss.size() != psd.phi_nn.size() || psd.phi_ss.empty())
    throw DataError("invalid PSD: speech and noise sets differ in size");
  const int C = static_cast<int>(psd.phi_ss.front().rows());
  if (ref_channel < 0 || ref_channel >= C) throw DataError("reference channel out of range");
  for (std::size_t f = 0; f < psd.phi_ss.size(); ++f) {
    if (psd.phi_ss[f].rows() != C || psd.phi_ss[f].cols() != C ||
        psd.phi_nn[f].rows() != C || psd.phi_nn[f].cols() != C)
      throw DataError("invalid PSD: inconsistent matrix sizes");
    check_hermitian(psd.phi_ss[f], opts.hermitian_tolerance);
    check_hermitian(psd.phi_nn[f], opts.hermitian_tolerance);
  }
}

}  // namespace

BeamWeights mvdr_weights(const PsdPair& psd, int ref_channel, const MvdrOptions& opts) {
  check_pair(psd, ref_channel, opts);
  const int C = static_cast<int>(psd.phi_ss.front().rows());
  BeamWeights w;
  w.ref_channel = ref_channel;
  w.h.resize(psd.phi_ss.size());
  for (std::size_t f = 0; f < psd.phi_ss.size(); ++f) {
    const MvdrBin bin = solve_bin(psd.phi_ss[f], psd.phi_nn[f], opts);
    if (degenerate_trace(bin)) {
      w.h[f] = CVector::Zero(C);
      w.h[f](ref_channel) = 1.0;
    } else {
      w.h[f] = bin.a.col(ref_channel) / bin.trace;
    }
  }
  return w;
}

cdouble mvdr_normalized_trace(const PsdPair& psd, int f, const MvdrOptions& opts) {
  const MvdrBin bin = solve_bin(psd.phi_ss.at(f), psd.phi_nn.at(f), opts);
  return (bin.a / bin.trace).trace();
}

PsdGrad mvdr_weights_backward(const PsdPair& psd, int ref_channel,
                              const std::vector<CVector>& grad_h, const MvdrOptions& opts) {
  const int C = static_cast<int>(psd.phi_ss.front().rows());
  PsdGrad g;
  g.phi_ss.assign(psd.phi_ss.size(), CMatrix::Zero(C, C));
  g.phi_nn.assign(psd.phi_nn.size(), CMatrix::Zero(C, C));
  for (std::size_t f = 0; f < psd.phi_ss.size(); ++f) {
    const MvdrBin bin = solve_bin(psd.phi_ss[f], psd.phi_nn[f], opts);
    if (degenerate_trace(bin)) continue;  // fallback weights are constant
    const CVector v = bin.a.col(ref_channel);
    const cdouble tau = bin.trace;
    // h = v / tau
    const CVector grad_v = grad_h[f] / std::conj(tau);
    const cdouble grad_tau = -(v.adjoint() * grad_h[f])(0, 0) / std::conj(tau * tau);
    CMatrix grad_a = CMatrix::Zero(C, C);
    grad_a.col(ref_channel) += grad_v;
    grad_a.diagonal().array() += grad_tau;
    // A = B^-1 S: dA = B^-1 dS - B^-1 dB A
    g.phi_ss[f] = bin.loaded.adjoint().partialPivLu().solve(grad_a);
    CMatrix grad_b = -g.phi_ss[f] * bin.a.adjoint();
    if (!bin.loading_floored) {
      const double grad_lambda = grad_b.trace().real();
      grad_b.diagonal().array() += opts.loading / C * grad_lambda;
    }
    g.phi_nn[f] = std::move(grad_b);
  }
  return g;
}

Spectrogram apply_beamformer(const BeamWeights& w, const Spectrogram& spec) {
  if (w.channels() != spec.channels) throw DataError("beamformer channel count mismatch");
  if (w.bins() != spec.bins) throw DataError("beamformer bin count mismatch");
  Spectrogram out = Spectrogram::zeros(spec.frames, spec.bins, 1, spec.sample_rate,
                                       spec.window_size, spec.hop);
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < spec.bins; ++f) {
      cdouble acc{};
      for (int c = 0; c < spec.channels; ++c) acc += std::conj(w.h[f](c)) * spec.at(t, f, c);
      out.at(t, f, 0) = acc;
    }
  }
  return out;
}

std::vector<CVector> apply_beamformer_backward(const Spectrogram& spec,
                                               std::span<const cdouble> grad_out) {
  std::vector<CVector> grad(spec.bins, CVector::Zero(spec.channels));
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < spec.bins; ++f) {
      const cdouble g = std::conj(grad_out[static_cast<std::size_t>(t) * spec.bins + f]);
      for (int c = 0; c < spec.channels; ++c) grad[f](c) += g * spec.at(t, f, c);
    }
  }
  // y = sum conj(h) x gives dL = Re(conj(dh) sum conj(g_y) x), so g_h = sum conj(g_y) x.
  return grad;
}

int select_reference(const PsdSet& phi_ss) {
  if (phi_ss.empty()) throw DataError("select_reference needs at least one frequency bin");
  const int C = static_cast<int>(phi_ss.front().rows());
  std::vector<double> power(C, 0.0);
  for (const auto& phi : phi_ss)
    for (int c = 0; c < C; ++c) power[c] += phi(c, c).real();
  int best = 0;
  for (int c = 1; c < C; ++c)
    if (power[c] > power[best]) best = c;
  return best;
}

Spectrogram delay_and_sum(const Spectrogram& spec, std::span<const double> delays) {
  if (static_cast<int>(delays.size()) != spec.channels)
    throw DataError("delay_and_sum: need one delay per channel");
  Spectrogram out = Spectrogram::zeros(spec.frames, spec.bins, 1, spec.sample_rate,
                                       spec.window_size, spec.hop);
  std::vector<cdouble> steer(static_cast<std::size_t>(spec.bins) * spec.channels);
  for (int f = 0; f < spec.bins; ++f) {
    const double omega = 2.0 * std::numbers::pi * f / spec.window_size;
    for (int c = 0; c < spec.channels; ++c)
      steer[static_cast<std::size_t>(f) * spec.channels + c] =
          std::polar(1.0 / spec.channels, -omega * delays[c]);
  }
  for (int t = 0; t < spec.frames; ++t) {
    for (int f = 0; f < spec.bins; ++f) {
      cdouble acc{};
      for (int c = 0; c < spec.channels; ++c)
        acc += steer[static_cast<std::size_t>(f) * spec.channels + c] * spec.at(t, f, c);
      out.at(t, f, 0) = acc;
    }
  }
  return out;
}

double snr_db(std::span<const double> signal, std::span<const double> noise) {
  double ps = 0.0, pn = 0.0;
  for (double v : signal) ps += v * v;
  for (double v : noise) pn += v * v;
  if (pn <= 0.0) throw NumericalError("snr_db: noise has zero power");
  return 10.0 * std::log10(ps / pn);
}

}  // namespace beamlab
