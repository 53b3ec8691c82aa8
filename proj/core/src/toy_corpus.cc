#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "beamlab/error.h"
#include "beamlab/sched.h"

namespace beamlab {

namespace {

constexpr double kLowestTone = 400.0;
constexpr double kHighestTone = 3600.0;
constexpr double kLeadSilence = 0.08;
constexpr double kRamp = 0.01;

std::string token_name(int id) {
  if (id <= 26) return std::string(1, static_cast<char>('a' + id - 1));
  return "tok" + std::to_string(id);
}

// Narrowband burst: three partials within +-3% of the centre frequency.
void add_burst(std::vector<double>& out, std::size_t start, std::size_t length, double freq,
               double amplitude, int sample_rate, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double partials[3] = {0.97, 1.0, 1.03};
  double phases[3];
  for (double& p : phases) p = phase(rng);
  const std::size_t ramp = static_cast<std::size_t>(kRamp * sample_rate);
  for (std::size_t i = 0; i < length && start + i < out.size(); ++i) {
    double env = 1.0;
    if (i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * i / ramp);
    if (length - 1 - i < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (length - 1 - i) / ramp);
    double v = 0.0;
    for (int k = 0; k < 3; ++k)
      v += std::sin(2.0 * std::numbers::pi * freq * partials[k] * i / sample_rate + phases[k]);
    out[start + i] += amplitude * env * v / 3.0;
  }
}

struct CleanUtterance {
  Waveform wave;
  LabelSequence labels;
};

CleanUtterance make_clean(const CorpusConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_tokens(cfg.min_tokens, cfg.max_tokens);
  std::uniform_int_distribution<int> token(1, cfg.vocab_size);
  std::uniform_real_distribution<double> duration(0.10, 0.16), gap(0.08, 0.14),
      amplitude(0.3, 0.8), jitter(-0.02, 0.02);

  CleanUtterance u;
  const int n = n_tokens(rng);
  // Token sequence first; with cover_vocabulary it is redrawn until every
  // token occurs.
  for (;;) {
    u.labels.clear();
    for (int i = 0; i < n; ++i) {
      // Reverberation bridges the gap between equal neighbours, so they are
      // never generated.
      int id = token(rng);
      while (!u.labels.empty() && id == u.labels.back()) id = token(rng);
      u.labels.push_back(id);
    }
    if (!cfg.cover_vocabulary) break;
    std::vector<bool> seen(cfg.vocab_size + 1, false);
    for (int id : u.labels) seen[id] = true;
    if (std::count(seen.begin() + 1, seen.end(), true) == cfg.vocab_size) break;
  }
  struct Burst { std::size_t start, length; double freq, amp; };
  std::vector<Burst> bursts;
  const double fs = cfg.sample_rate;
  std::size_t cursor = static_cast<std::size_t>(kLeadSilence * fs);
  for (int id : u.labels) {
    Burst b;
    b.length = static_cast<std::size_t>(duration(rng) * fs);
    b.freq = token_frequency(id, cfg.vocab_size) * (1.0 + jitter(rng));
    b.amp = amplitude(rng);
    b.start = cursor;
    bursts.push_back(b);
    cursor += b.length + static_cast<std::size_t>(gap(rng) * fs);
  }
  const std::size_t total = cursor + static_cast<std::size_t>(kLeadSilence * fs);
  u.wave = Waveform::zeros(1, static_cast<int>(total), cfg.sample_rate);
  for (const auto& b : bursts)
    add_burst(u.wave.samples[0], b.start, b.length, b.freq, b.amp, cfg.sample_rate, rng);
  return u;
}

}  // namespace

CorpusConfig::CorpusConfig() { room.array = chime4_array(kDefaultArrayCenter); }

double token_frequency(int token, int vocab_size) {
  if (vocab_size <= 1) return kLowestTone;
  const double pos = static_cast<double>(token - 1) / (vocab_size - 1);
  return kLowestTone * std::pow(kHighestTone / kLowestTone, pos);
}

Waveform render_multichannel(const Waveform& clean, const Rir& rir, double snr_db,
                             std::mt19937_64& rng) {
  Waveform image = simulate_multichannel(clean, rir);
  for (auto& ch : image.samples) ch.resize(clean.num_samples());
  if (std::isinf(snr_db) && snr_db > 0) return image;
  Waveform noise = Waveform::zeros(image.num_channels(), image.num_samples(), image.sample_rate);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (auto& ch : noise.samples)
    for (double& v : ch) v = gauss(rng);
  return mix_at_snr(image, noise, snr_db, 0);
}

Waveform speed_perturb(const Waveform& wave, double factor) {
  if (!(factor > 0.0)) throw DataError("speed factor must be positive");
  const int n_in = wave.num_samples();
  const int n_out = std::max(1, static_cast<int>(std::floor((n_in - 1) / factor)) + 1);
  Waveform out = Waveform::zeros(wave.num_channels(), n_out, wave.sample_rate);
  for (int c = 0; c < wave.num_channels(); ++c) {
    for (int i = 0; i < n_out; ++i) {
      const double pos = i * factor;
      const int k = std::min(static_cast<int>(pos), n_in - 1);
      const double frac = pos - k;
      const double next = k + 1 < n_in ? wave.samples[c][k + 1] : wave.samples[c][k];
      out.samples[c][i] = (1.0 - frac) * wave.samples[c][k] + frac * next;
    }
  }
  return out;
}

Waveform wav_augment(const Waveform& wave, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> gain_db(-6.0, 6.0);
  const double gain = std::pow(10.0, gain_db(rng) / 20.0);
  Waveform out = wave;
  for (auto& ch : out.samples)
    for (double& v : ch) v *= gain;
  const int max_drop = static_cast<int>(0.05 * wave.sample_rate);
  const int n = wave.num_samples();
  if (n > max_drop) {
    std::uniform_int_distribution<int> len(0, max_drop);
    const int drop = len(rng);
    std::uniform_int_distribution<int> start(0, n - drop);
    const int s = start(rng);
    for (auto& ch : out.samples) std::fill(ch.begin() + s, ch.begin() + s + drop, 0.0);
  }
  return out;
}

ToyCorpus generate_toy_corpus(const CorpusConfig& cfg) {
  if (cfg.vocab_size < 2) throw DataError("toy corpus needs at least two tokens");
  if (cfg.min_tokens < 1 || cfg.max_tokens < cfg.min_tokens)
    throw DataError("invalid token count range");
  if (cfg.cover_vocabulary && cfg.min_tokens < cfg.vocab_size)
    throw DataError("cover_vocabulary needs min_tokens >= vocab_size");
  if (cfg.n_multi < 0 || cfg.n_single < 0 || cfg.n_test < 0)
    throw DataError("corpus sizes must be non-negative");

  ToyCorpus corpus;
  for (int id = 1; id <= cfg.vocab_size; ++id) corpus.vocabulary.push_back(token_name(id));
  if (cfg.n_multi == 0 && cfg.n_single == 0 && cfg.n_test == 0) return corpus;

  RirOptions rir_opts = cfg.room.rir;
  rir_opts.sample_rate = cfg.sample_rate;
  const Rir rir = image_source_rir(cfg.room.room, cfg.room.array, rir_opts);

  auto render_set = [&](int count, std::uint64_t content_stream, std::uint64_t noise_stream,
                        const std::string& prefix, std::vector<Utterance>& out) {
    std::mt19937_64 content = rng_stream(cfg.seed, content_stream);
    std::mt19937_64 noise = rng_stream(cfg.seed, noise_stream);
    for (int i = 0; i < count; ++i) {
      CleanUtterance clean = make_clean(cfg, content);
      char id[32];
      std::snprintf(id, sizeof(id), "%s-%04d", prefix.c_str(), i);
      out.push_back({id, render_multichannel(clean.wave, rir, cfg.snr_db, noise),
                     std::move(clean.labels), Origin::kReal});
    }
  };
  render_set(cfg.n_multi, 11, 14, "multi", corpus.multi);
  render_set(cfg.n_test, 13, 15, "test", corpus.test);

  std::mt19937_64 single_rng = rng_stream(cfg.seed, 12);
  for (int i = 0; i < cfg.n_single; ++i) {
    CleanUtterance clean = make_clean(cfg, single_rng);
    char id[32];
    std::snprintf(id, sizeof(id), "single-%04d", i);
    corpus.single.push_back({id, std::move(clean.wave), std::move(clean.labels), Origin::kSingle});
  }
  return corpus;
}

}  // namespace beamlab
