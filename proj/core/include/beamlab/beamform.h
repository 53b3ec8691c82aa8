#pragma once

// Mask-based MVDR beamforming and the delay-and-sum baseline.
//
// Forward operations and their adjoints sit side by side; the adjoints use the
// gradient convention g = dL/dRe(z) + i dL/dIm(z) for a real loss L, so that
// dL = Re(sum conj(g) dz).

#include <Eigen/Dense>
#include <span>
#include <utility>
#include <vector>

#include "beamlab/dsp.h"

namespace beamlab {

using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

enum class MaskTarget { kSpeech, kNoise };

struct TFMask {
  int frames = 0;
  int bins = 0;
  MaskTarget target = MaskTarget::kSpeech;
  std::vector<double> values;  // values[t * bins + f], each in [0, 1]

  static TFMask filled(int frames, int bins, double value, MaskTarget target);

  double& at(int t, int f) { return values[static_cast<std::size_t>(t) * bins + f]; }
  double at(int t, int f) const { return values[static_cast<std::size_t>(t) * bins + f]; }

  // 1 - m, retargeted.
  TFMask complement() const;
};

// One C x C cross-channel PSD matrix per frequency bin.
using PsdSet = std::vector<CMatrix>;

struct PsdPair {
  PsdSet phi_ss;
  PsdSet phi_nn;
};

struct BeamWeights {
  std::vector<CVector> h;  // h[f] has one entry per channel
  int ref_channel = 0;

  int bins() const { return static_cast<int>(h.size()); }
  int channels() const { return h.empty() ? 0 : static_cast<int>(h.front().size()); }

  static BeamWeights one_hot(int bins, int channels, int ref);
};

inline constexpr double kMaskEpsilon = 1e-10;

// Ideal ratio masks from the reference channel powers:
// m_s = |S|^2 / (|S|^2 + |N|^2 + eps), m_n = 1 - m_s.
std::pair<TFMask, TFMask> oracle_masks(const Spectrogram& clean, const Spectrogram& noise,
                                       int ref_channel = 0);

// Phi(f) = sum_t m(t,f) x x^H / max(sum_t m(t,f), eps).
PsdSet estimate_psd(const Spectrogram& spec, const TFMask& mask);

// Adjoint of estimate_psd w.r.t. the mask; grad_psd[f] is the gradient w.r.t.
// Phi(f) entries. Returns dL/dm laid out like the mask.
std::vector<double> estimate_psd_backward(const Spectrogram& spec, const TFMask& mask,
                                          const PsdSet& psd, const PsdSet& grad_psd);

struct MvdrOptions {
  // Diagonal loading relative to the average noise power tr(Phi_NN)/C.
  double loading = 1e-6;
  // Lower bound on tr(Phi_NN)/C before loading, so an all-zero noise PSD
  // still yields an invertible matrix.
  double min_noise_power = 1e-20;
  // Maximum |Phi - Phi^H| relative to max(1, max|Phi|).
  double hermitian_tolerance = 1e-10;
};

// h(f) = (Phi_NN + lambda I)^-1 Phi_SS u / tr{(Phi_NN + lambda I)^-1 Phi_SS}.
// When the trace vanishes (no speech energy at f) the weights fall back to u.
BeamWeights mvdr_weights(const PsdPair& psd, int ref_channel, const MvdrOptions& opts = {});

// Trace of the normalized matrix A/tr(A), A = (Phi_NN + lambda I)^-1 Phi_SS,
// for bin f. Exposed for verification.
std::complex<double> mvdr_normalized_trace(const PsdPair& psd, int f,
                                           const MvdrOptions& opts = {});

struct PsdGrad {
  PsdSet phi_ss;
  PsdSet phi_nn;
};

// Adjoint of mvdr_weights. The loading term's dependence on tr(Phi_NN) is
// included.
PsdGrad mvdr_weights_backward(const PsdPair& psd, int ref_channel,
                              const std::vector<CVector>& grad_h,
                              const MvdrOptions& opts = {});

// x_hat(t,f) = sum_c conj(h(f,c)) x(t,f,c). The conjugate makes
// h^H d = d_ref for the MVDR solution, i.e. the response toward the
// reference channel is distortionless.
Spectrogram apply_beamformer(const BeamWeights& w, const Spectrogram& spec);

// Adjoint of apply_beamformer w.r.t. h. grad_out is laid out like the
// one-channel output spectrogram data.
std::vector<CVector> apply_beamformer_backward(const Spectrogram& spec,
                                               std::span<const cdouble> grad_out);

// argmax_c mean_f Re Phi_SS(f)[c][c]; ties go to the lowest index.
int select_reference(const PsdSet& phi_ss);

// x_hat(t,f) = (1/C) sum_c exp(-j w_f tau_c) x(t,f,c), w_f = 2 pi f / window.
Spectrogram delay_and_sum(const Spectrogram& spec, std::span<const double> delays);

// 10 log10(sum s^2 / sum n^2).
double snr_db(std::span<const double> signal, std::span<const double> noise);

}  // namespace beamlab
