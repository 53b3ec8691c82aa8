#pragma once

// Training schemes that exploit single-channel data for the joint model:
//
//   PT      - train the acoustic model on single-channel data, then run joint
//             optimization on the multi-channel set.
//   DS      - one stage; every batch is either a multi-channel joint batch or a
//             single-channel batch that bypasses the front-end. Single batches
//             are N = #single / #multi times larger, so both sets are swept in
//             the same number of batches.
//   SIMU    - render single-channel audio through simulated rooms and pool it
//             with the real multi-channel data.
//   JO_ONLY - joint optimization on the multi-channel set alone.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "beamlab/corpus_io.h"
#include "beamlab/pipeline.h"
#include "beamlab/roomsim.h"

namespace beamlab {

enum class Scheme { kPretrain, kDataScheduling, kSimulation, kJointOnly };

std::string to_string(Scheme scheme);
// Accepts PT, DS, SIMU, JO_ONLY (case-insensitive); throws UsageError otherwise.
Scheme parse_scheme(const std::string& s);

struct Utterance {
  std::string id;
  Waveform wave;
  LabelSequence labels;
  Origin origin = Origin::kReal;
};

struct CorpusConfig {
  int n_multi = 50;
  int n_single = 100;
  int n_test = 20;
  int vocab_size = 4;
  std::uint64_t seed = 7;
  double snr_db = 5.0;
  int min_tokens = 4;
  int max_tokens = 6;
  // Every utterance contains every token. Per-utterance CMVN scales a band
  // that carries only noise up to unit variance, which then looks like speech.
  bool cover_vocabulary = true;
  int sample_rate = 16000;
  RoomConfig room;  // defaults to the 10 x 7.5 x 3.5 m room with the chime4-6ch preset

  CorpusConfig();
};

struct ToyCorpus {
  std::vector<Utterance> multi;   // reverberant, noisy, one channel per mic
  std::vector<Utterance> single;  // clean mono
  std::vector<Utterance> test;    // held-out multi-channel utterances
  std::vector<std::string> vocabulary;
};

// Centre frequency of the tone burst for token id (1-based).
double token_frequency(int token, int vocab_size);

// Each token is a band-limited tone burst at its own frequency; utterances are
// bursts separated by silence, never two equal tokens in a row. Deterministic
// given the seed.
ToyCorpus generate_toy_corpus(const CorpusConfig& cfg);

// Renders clean mono audio through `rir` and adds spatially white noise at
// snr_db (reference channel 0). Output keeps the source length.
Waveform render_multichannel(const Waveform& clean, const Rir& rir, double snr_db,
                             std::mt19937_64& rng);

// Linear-interpolation resampling by `factor` (> 1 shortens the signal).
Waveform speed_perturb(const Waveform& wave, double factor);

// Random gain in [-6, 6] dB and one zeroed span of up to 50 ms.
Waveform wav_augment(const Waveform& wave, std::mt19937_64& rng);

struct ScheduleConfig {
  Scheme mode = Scheme::kJointOnly;
  int epochs = 20;
  int multi_batch_size = 2;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;
  int pretrain_epochs = 5;
  RoomConfig simulation;
  double simulation_snr_db = 5.0;
  bool speed_perturb = false;
  bool wav_augment = false;
  AugPolicy spec_augment;
  int workers = 1;
  int stft_window = 512;
  int stft_hop = 128;
  JointModelConfig model;

  ScheduleConfig();
  void validate() const;
};

enum class BatchKind { kMulti, kSingle };

struct BatchDesc {
  BatchKind kind = BatchKind::kMulti;
  std::vector<int> ids;
};

struct BatchPlan {
  std::vector<BatchDesc> batches;
  int multi_batch_size = 0;
  int single_batch_size = 0;
  double ratio = 0.0;  // N

  int count(BatchKind kind) const;
  int utterances(BatchKind kind) const;
};

// Single-channel batch size round(N * multi_batch_size), at least 1.
int single_batch_size(int n_multi, int n_single, int multi_batch_size);

// Shuffles both sets and, for DS, interleaves MULTI and SINGLE batches at
// random. Other modes produce MULTI batches only.
BatchPlan plan_epoch(std::span<const int> multi_ids, std::span<const int> single_ids,
                     const ScheduleConfig& cfg, std::mt19937_64& rng);

// Independent deterministic stream per purpose.
std::mt19937_64 rng_stream(std::uint64_t seed, std::uint64_t purpose);

enum class StreamPurpose : std::uint64_t {
  kPlan = 1,
  kSimulation = 2,
  kAugment = 3,
  kPretrain = 4,
};

// Per-epoch cost: PT -> T1, DS -> T1 + T2, SIMU -> (1 + N) T1,
// JO_ONLY -> T1. Negative inputs throw.
double epoch_cost_model(double t1, double t2, double n, Scheme mode);

bool single_stage(Scheme mode);
bool augments_front_end(Scheme mode);

struct EpochStats {
  int epoch = 0;
  double joint_loss = 0.0;   // mean per multi-channel utterance
  double single_loss = 0.0;  // mean per single-channel utterance
  int multi_batches = 0;
  int single_batches = 0;
  int multi_utts = 0;        // utterances through the joint path
  int single_utts = 0;       // utterances through the back-end-only path
  int real_utts = 0;         // joint-path utterances of real origin
  int simulated_utts = 0;    // joint-path utterances of simulated origin
  double seconds = 0.0;
};

struct PretrainResult {
  TrainState state;
  std::vector<double> epoch_losses;
};

// Back-end-only training on clean single-channel audio. The front-end keeps
// its initialization.
PretrainResult run_pretrain(const ScheduleConfig& cfg, std::span<const Utterance> single_set);

struct Report {
  ScheduleConfig config;
  std::string config_echo;  // JSON the run was configured with
  std::vector<double> pretrain_losses;
  std::vector<EpochStats> epochs;
  double ratio = 0.0;  // N
  int n_multi = 0;
  int n_single = 0;
  int n_pooled = 0;
  double test_token_error = 0.0;
  EditCounts test_errors;
  int test_tokens = 0;
  double t1_seconds = 0.0;  // measured joint epoch cost
  double t2_seconds = 0.0;  // measured back-end epoch cost
  double predicted_epoch_seconds = 0.0;
  double measured_epoch_seconds = 0.0;
  bool ratio_law_holds = false;
  bool augmentation_law_holds = false;
  TrainState final_state;

  std::string to_json() const;
};

Report run_training(const ScheduleConfig& cfg, std::span<const Utterance> multi_set,
                    std::span<const Utterance> single_set, std::span<const Utterance> test_set);

// Token error rate of the joint model on a multi-channel set.
double evaluate_token_error(const TrainState& state, std::span<const Utterance> set,
                            int stft_window, int stft_hop, EditCounts* counts = nullptr,
                            int* ref_tokens = nullptr);

struct SchemeSummary {
  Scheme scheme = Scheme::kJointOnly;
  std::vector<std::uint64_t> seeds;
  std::vector<double> token_errors;
  double mean_token_error = 0.0;
  double mean_epoch_seconds = 0.0;
};

struct ComparisonReport {
  std::vector<SchemeSummary> schemes;
  std::string to_json() const;
  std::string table() const;
};

// Trains every scheme for each seed on a corpus generated with that seed.
ComparisonReport compare_schemes(const ScheduleConfig& base, const CorpusConfig& corpus,
                                 std::span<const std::uint64_t> seeds,
                                 std::span<const Scheme> schemes);

// ScheduleConfig JSON (see README for the schema); unknown keys are rejected.
ScheduleConfig schedule_config_from_json(const std::string& text);
std::string schedule_config_to_json(const ScheduleConfig& cfg);

CorpusConfig corpus_config_from_json(const std::string& text);

// Loads every entry's audio (relative to the manifest directory).
std::vector<Utterance> load_utterances(const std::string& manifest_path);

}  // namespace beamlab
