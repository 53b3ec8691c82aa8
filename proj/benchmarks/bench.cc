#include <benchmark/benchmark.h>

#include <random>

#include "beamlab/backend.h"
#include "beamlab/beamform.h"
#include "beamlab/dsp.h"
#include "beamlab/pipeline.h"
#include "cli.h"

namespace beamlab {
namespace {

Waveform noise(int channels, int n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Waveform w = Waveform::zeros(channels, n, 16000);
  for (auto& ch : w.samples)
    for (double& v : ch) v = g(rng);
  return w;
}

void BM_Stft(benchmark::State& state) {
  const Waveform w = noise(static_cast<int>(state.range(0)), 16000);
  for (auto _ : state) benchmark::DoNotOptimize(stft(w));
}
BENCHMARK(BM_Stft)->Arg(1)->Arg(6);

void BM_Istft(benchmark::State& state) {
  const Spectrogram s = stft(noise(1, 16000));
  for (auto _ : state) benchmark::DoNotOptimize(istft(s));
}
BENCHMARK(BM_Istft);

void BM_Mvdr(benchmark::State& state) {
  const int C = static_cast<int>(state.range(0));
  const Spectrogram x = stft(noise(C, 16000));
  const TFMask m = TFMask::filled(x.frames, x.bins, 0.5, MaskTarget::kSpeech);
  const PsdPair psd{estimate_psd(x, m), estimate_psd(x, m.complement())};
  for (auto _ : state) benchmark::DoNotOptimize(mvdr_weights(psd, 0));
}
BENCHMARK(BM_Mvdr)->Arg(2)->Arg(4)->Arg(6);

void BM_Ctc(benchmark::State& state) {
  const int T = static_cast<int>(state.range(0));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  LogProbLattice lat = LogProbLattice::zeros(T, 9);
  for (int t = 0; t < T; ++t) {
    double z = 0.0;
    for (int k = 0; k < 9; ++k) z += std::exp(lat.at(t, k) = g(rng));
    for (int k = 0; k < 9; ++k) lat.at(t, k) -= std::log(z);
  }
  const LabelSequence labels{1, 2, 3, 4, 5, 6, 7, 8, 1, 2};
  for (auto _ : state) benchmark::DoNotOptimize(ctc_loss(lat, labels));
}
BENCHMARK(BM_Ctc)->Arg(50)->Arg(200);

void BM_JointForwardBackward(benchmark::State& state) {
  const auto inst = cli::gradcheck_instance(state.range(0) == 0 ? "tiny" : "small", 1);
  for (auto _ : state) {
    const JointForward fwd = forward_joint(inst.state, inst.utt, inst.labels);
    benchmark::DoNotOptimize(backward_joint(fwd));
  }
}
BENCHMARK(BM_JointForwardBackward)->Arg(0)->Arg(1);

}  // namespace
}  // namespace beamlab

BENCHMARK_MAIN();
