#include "beamlab/sched.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "beamlab/error.h"

namespace beamlab {

using nlohmann::json;

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::kPretrain: return "PT";
    case Scheme::kDataScheduling: return "DS";
    case Scheme::kSimulation: return "SIMU";
    case Scheme::kJointOnly: return "JO_ONLY";
  }
  return "JO_ONLY";
}

Scheme parse_scheme(const std::string& s) {
  std::string u = s;
  std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
  if (u == "PT") return Scheme::kPretrain;
  if (u == "DS") return Scheme::kDataScheduling;
  if (u == "SIMU") return Scheme::kSimulation;
  if (u == "JO_ONLY" || u == "JO") return Scheme::kJointOnly;
  throw UsageError("invalid mode '" + s + "' (expected PT, DS, SIMU or JO_ONLY)");
}

ScheduleConfig::ScheduleConfig() { simulation.array = chime4_array(kDefaultArrayCenter); }

void ScheduleConfig::validate() const {
  if (epochs < 1) throw UsageError("epochs must be positive");
  if (multi_batch_size < 1) throw UsageError("multi_batch_size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw UsageError("learning_rate must be positive");
  if (pretrain_epochs < 0) throw UsageError("pretrain_epochs must be non-negative");
  if (workers < 1) throw UsageError("workers must be at least 1");
  if (stft_window <= 0 || (stft_window & (stft_window - 1)) != 0)
    throw UsageError("stft_window must be a power of two");
  if (stft_hop <= 0 || stft_hop > stft_window) throw UsageError("stft_hop must be in (0, window]");
  if (model.vocab_size < 1) throw UsageError("model.vocab_size must be positive");
  if (model.features.n_mels < 1 || model.features.subsample < 1)
    throw UsageError("invalid feature settings");
  if (model.mask_hidden < 1 || model.am_hidden < 1 || model.am_context < 0)
    throw UsageError("invalid model widths");
  if (mode == Scheme::kSimulation) simulation.room.validate();
}

int BatchPlan::count(BatchKind kind) const {
  return static_cast<int>(std::count_if(batches.begin(), batches.end(),
                                        [&](const BatchDesc& b) { return b.kind == kind; }));
}

int BatchPlan::utterances(BatchKind kind) const {
  int n = 0;
  for (const auto& b : batches)
    if (b.kind == kind) n += static_cast<int>(b.ids.size());
  return n;
}

int single_batch_size(int n_multi, int n_single, int multi_batch_size) {
  if (n_multi <= 0) throw DataError("empty multi-channel set");
  const double ratio = static_cast<double>(n_single) / n_multi;
  return std::max(1, static_cast<int>(std::lround(ratio * multi_batch_size)));
}

namespace {

std::vector<BatchDesc> chunk(const std::vector<int>& ids, int size, BatchKind kind) {
  std::vector<BatchDesc> out;
  for (std::size_t i = 0; i < ids.size(); i += size) {
    BatchDesc b;
    b.kind = kind;
    b.ids.assign(ids.begin() + i, ids.begin() + std::min(ids.size(), i + size));
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace

BatchPlan plan_epoch(std::span<const int> multi_ids, std::span<const int> single_ids,
                     const ScheduleConfig& cfg, std::mt19937_64& rng) {
  if (multi_ids.empty()) throw DataError("empty multi-channel set");
  BatchPlan plan;
  plan.multi_batch_size = cfg.multi_batch_size;

  std::vector<int> multi(multi_ids.begin(), multi_ids.end());
  std::shuffle(multi.begin(), multi.end(), rng);
  std::vector<BatchDesc> multi_batches = chunk(multi, cfg.multi_batch_size, BatchKind::kMulti);

  if (cfg.mode != Scheme::kDataScheduling || single_ids.empty()) {
    plan.batches = std::move(multi_batches);
    plan.ratio = cfg.mode == Scheme::kDataScheduling
                     ? 0.0
                     : static_cast<double>(single_ids.size()) / multi_ids.size();
    return plan;
  }

  plan.ratio = static_cast<double>(single_ids.size()) / multi_ids.size();
  plan.single_batch_size =
      single_batch_size(static_cast<int>(multi_ids.size()), static_cast<int>(single_ids.size()),
                        cfg.multi_batch_size);
  std::vector<int> single(single_ids.begin(), single_ids.end());
  std::shuffle(single.begin(), single.end(), rng);
  std::vector<BatchDesc> single_batches = chunk(single, plan.single_batch_size, BatchKind::kSingle);

  // Random merge: the next batch is MULTI with probability proportional to the
  // MULTI batches still pending.
  std::size_t i = 0, j = 0;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  while (i < multi_batches.size() || j < single_batches.size()) {
    const std::size_t a = multi_batches.size() - i, b = single_batches.size() - j;
    bool take_multi = b == 0;
    if (a > 0 && b > 0) take_multi = u(rng) < static_cast<double>(a) / (a + b);
    if (take_multi) {
      plan.batches.push_back(std::move(multi_batches[i++]));
    } else {
      plan.batches.push_back(std::move(single_batches[j++]));
    }
  }
  return plan;
}

std::mt19937_64 rng_stream(std::uint64_t seed, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(purpose >> 32)};
  return std::mt19937_64(seq);
}

double epoch_cost_model(double t1, double t2, double n, Scheme mode) {
  if (t1 < 0.0 || t2 < 0.0 || n < 0.0 || !std::isfinite(t1) || !std::isfinite(t2) ||
      !std::isfinite(n))
    throw DataError("epoch cost inputs must be non-negative");
  switch (mode) {
    case Scheme::kPretrain: return t1;
    case Scheme::kDataScheduling: return t1 + t2;
    case Scheme::kSimulation: return (1.0 + n) * t1;
    case Scheme::kJointOnly: return t1;
  }
  return t1;
}

bool single_stage(Scheme mode) { return mode != Scheme::kPretrain; }
bool augments_front_end(Scheme mode) { return mode == Scheme::kSimulation; }

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void sgd_step(std::vector<ParamView> params, const std::vector<ConstParamView>& grads,
              double scale) {
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t k = 0; k < params[i].values.size(); ++k)
      params[i].values[k] -= scale * grads[i].values[k];
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; results keep index order.
template <typename R, typename Fn>
std::vector<R> parallel_map(std::size_t n, int workers, Fn fn) {
  std::vector<R> out(n);
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
    return out;
  }
  std::vector<std::future<void>> jobs;
  const std::size_t w = std::min<std::size_t>(workers, n);
  for (std::size_t k = 0; k < w; ++k) {
    jobs.push_back(std::async(std::launch::async, [&, k] {
      for (std::size_t i = k; i < n; i += w) out[i] = fn(i);
    }));
  }
  for (auto& j : jobs) j.get();
  return out;
}

struct SingleFeatureSource {
  std::span<const Utterance> set;
  std::vector<FeatureMatrix> cached;  // empty when features depend on augmentation
};

FeatureMatrix single_features(const ScheduleConfig& cfg, const Utterance& u,
                              std::mt19937_64* aug) {
  Waveform w = u.wave;
  if (cfg.speed_perturb && aug != nullptr) {
    static constexpr double kFactors[3] = {0.9, 1.0, 1.1};
    std::uniform_int_distribution<int> pick(0, 2);
    w = speed_perturb(w, kFactors[pick(*aug)]);
  }
  FeatureMatrix f = extract_features(stft(w, cfg.stft_window, cfg.stft_hop), cfg.model.features);
  if (aug != nullptr && (cfg.spec_augment.freq_masks > 0 || cfg.spec_augment.time_masks > 0))
    f = spec_augment(f, cfg.spec_augment, *aug);
  return f;
}

bool single_features_fixed(const ScheduleConfig& cfg) {
  return !cfg.speed_perturb && cfg.spec_augment.freq_masks == 0 &&
         cfg.spec_augment.time_masks == 0;
}

std::vector<FeatureMatrix> precompute_single(const ScheduleConfig& cfg,
                                             std::span<const Utterance> set) {
  std::vector<FeatureMatrix> out;
  if (!single_features_fixed(cfg)) return out;
  out.reserve(set.size());
  for (const auto& u : set) out.push_back(single_features(cfg, u, nullptr));
  return out;
}

void check_single_channel(std::span<const Utterance> set) {
  for (const auto& u : set)
    if (u.wave.num_channels() != 1)
      throw DataError("single-channel utterance '" + u.id + "' has " +
                      std::to_string(u.wave.num_channels()) + " channels");
}

struct BackendBatchResult {
  double loss_sum = 0.0;
  AmParams grad_sum;
};

BackendBatchResult backend_batch(const ScheduleConfig& cfg, const AmParams& am,
                                 std::span<const Utterance> set,
                                 const std::vector<FeatureMatrix>& cached,
                                 const std::vector<int>& ids, std::mt19937_64& aug) {
  // Augmented features are drawn sequentially so the stream does not depend on workers.
  std::vector<FeatureMatrix> feats;
  if (cached.empty())
    for (int id : ids) feats.push_back(single_features(cfg, set[id], &aug));
  auto steps = parallel_map<BackendStep>(ids.size(), cfg.workers, [&](std::size_t i) {
    const FeatureMatrix& f = cached.empty() ? feats[i] : cached[ids[i]];
    return backend_loss_and_grad(am, f, set[ids[i]].labels);
  });
  BackendBatchResult r{0.0, AmParams::zeros(am.input_dims, am.context, am.hidden, am.symbols)};
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!std::isfinite(steps[i].loss))
      throw NumericalError("non-finite back-end loss on utterance '" + set[ids[i]].id + "'");
    r.loss_sum += steps[i].loss;
    auto dst = r.grad_sum.views();
    const auto src = std::as_const(steps[i].grad).views();
    for (std::size_t k = 0; k < dst.size(); ++k)
      for (std::size_t e = 0; e < dst[k].values.size(); ++e) dst[k].values[e] += src[k].values[e];
  }
  return r;
}

}  // namespace

PretrainResult run_pretrain(const ScheduleConfig& cfg, std::span<const Utterance> single_set) {
  cfg.validate();
  check_single_channel(single_set);
  PretrainResult result{TrainState::initialize(cfg.model, cfg.seed), {}};
  if (single_set.empty() || cfg.pretrain_epochs == 0) return result;

  const std::vector<FeatureMatrix> cached = precompute_single(cfg, single_set);
  std::mt19937_64 order = rng_stream(cfg.seed, static_cast<std::uint64_t>(StreamPurpose::kPretrain));
  std::mt19937_64 aug = rng_stream(cfg.seed, static_cast<std::uint64_t>(StreamPurpose::kAugment) + 100);
  std::vector<int> ids(single_set.size());
  std::iota(ids.begin(), ids.end(), 0);

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::shuffle(ids.begin(), ids.end(), order);
    double loss = 0.0;
    for (const auto& batch : chunk(ids, cfg.multi_batch_size, BatchKind::kSingle)) {
      BackendBatchResult r = backend_batch(cfg, result.state.am, single_set, cached, batch.ids, aug);
      loss += r.loss_sum;
      sgd_step(result.state.am.views(), std::as_const(r.grad_sum).views(),
               cfg.learning_rate / batch.ids.size());
      ++result.state.step;
    }
    const double mean = loss / single_set.size();
    if (!std::isfinite(mean)) throw NumericalError("pre-training diverged");
    result.epoch_losses.push_back(mean);
  }
  return result;
}

double evaluate_token_error(const TrainState& state, std::span<const Utterance> set,
                            int stft_window, int stft_hop, EditCounts* counts, int* ref_tokens) {
  EditCounts total;
  int tokens = 0;
  for (const auto& u : set) {
    const LabelSequence hyp = decode_joint(state, stft(u.wave, stft_window, stft_hop));
    const EditCounts e = edit_distance(hyp, u.labels);
    total.substitutions += e.substitutions;
    total.insertions += e.insertions;
    total.deletions += e.deletions;
    tokens += static_cast<int>(u.labels.size());
  }
  if (counts != nullptr) *counts = total;
  if (ref_tokens != nullptr) *ref_tokens = tokens;
  return tokens == 0 ? 0.0 : static_cast<double>(total.total()) / tokens;
}

Report run_training(const ScheduleConfig& cfg, std::span<const Utterance> multi_set,
                    std::span<const Utterance> single_set, std::span<const Utterance> test_set) {
  cfg.validate();
  if (multi_set.empty()) throw DataError("empty multi-channel set");
  check_single_channel(single_set);

  Report report;
  report.config = cfg;
  report.config_echo = schedule_config_to_json(cfg);
  report.n_multi = static_cast<int>(multi_set.size());
  report.n_single = static_cast<int>(single_set.size());
  report.ratio = static_cast<double>(single_set.size()) / multi_set.size();

  // Joint-path pool: the real multi-channel data plus, for SIMU, renderings of
  // every single-channel utterance.
  std::vector<Utterance> simulated;
  if (cfg.mode == Scheme::kSimulation && !single_set.empty()) {
    RirOptions opts = cfg.simulation.rir;
    opts.sample_rate = single_set.front().wave.sample_rate;
    const Rir rir = image_source_rir(cfg.simulation.room, cfg.simulation.array, opts);
    std::mt19937_64 noise =
        rng_stream(cfg.seed, static_cast<std::uint64_t>(StreamPurpose::kSimulation));
    for (const auto& u : single_set) {
      simulated.push_back({u.id + "-sim", render_multichannel(u.wave, rir, cfg.simulation_snr_db, noise),
                           u.labels, Origin::kSimulated});
    }
  }
  std::vector<const Utterance*> pool;
  for (const auto& u : multi_set) pool.push_back(&u);
  for (const auto& u : simulated) pool.push_back(&u);
  report.n_pooled = static_cast<int>(pool.size());

  std::vector<Spectrogram> pool_specs;
  if (!cfg.wav_augment) {
    pool_specs.reserve(pool.size());
    for (const Utterance* u : pool) pool_specs.push_back(stft(u->wave, cfg.stft_window, cfg.stft_hop));
  }

  TrainState state;
  if (cfg.mode == Scheme::kPretrain) {
    PretrainResult pre = run_pretrain(cfg, single_set);
    state = std::move(pre.state);
    report.pretrain_losses = std::move(pre.epoch_losses);
  } else {
    state = TrainState::initialize(cfg.model, cfg.seed);
  }

  const bool uses_single_batches = cfg.mode == Scheme::kDataScheduling;
  const std::vector<FeatureMatrix> single_cached =
      uses_single_batches ? precompute_single(cfg, single_set) : std::vector<FeatureMatrix>{};

  std::vector<int> pool_ids(pool.size());
  std::iota(pool_ids.begin(), pool_ids.end(), 0);
  std::vector<int> single_ids;
  if (uses_single_batches) {
    single_ids.resize(single_set.size());
    std::iota(single_ids.begin(), single_ids.end(), 0);
  }

  std::mt19937_64 plan_rng = rng_stream(cfg.seed, static_cast<std::uint64_t>(StreamPurpose::kPlan));
  std::mt19937_64 aug_rng = rng_stream(cfg.seed, static_cast<std::uint64_t>(StreamPurpose::kAugment));

  double joint_time = 0.0, backend_time = 0.0;
  int joint_count = 0, backend_count = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    const BatchPlan plan = plan_epoch(pool_ids, single_ids, cfg, plan_rng);
    EpochStats stats;
    stats.epoch = epoch + 1;
    double joint_loss = 0.0, single_loss = 0.0;

    for (const BatchDesc& batch : plan.batches) {
      const auto t0 = Clock::now();
      if (batch.kind == BatchKind::kMulti) {
        std::vector<Spectrogram> augmented;
        if (cfg.wav_augment)
          for (int id : batch.ids)
            augmented.push_back(stft(wav_augment(pool[id]->wave, aug_rng), cfg.stft_window, cfg.stft_hop));
        struct Item { double loss; GradBundle grad; };
        auto items = parallel_map<Item>(batch.ids.size(), cfg.workers, [&](std::size_t i) {
          const int id = batch.ids[i];
          const Spectrogram& spec = cfg.wav_augment ? augmented[i] : pool_specs[id];
          const JointForward fwd = forward_joint(state, spec, pool[id]->labels);
          return Item{fwd.loss, backward_joint(fwd)};
        });
        GradBundle sum = GradBundle::zeros_like(state);
        for (std::size_t i = 0; i < items.size(); ++i) {
          const Utterance& u = *pool[batch.ids[i]];
          if (!std::isfinite(items[i].loss) || !items[i].grad.all_finite())
            throw NumericalError("divergence at epoch " + std::to_string(epoch + 1) +
                                 " on utterance '" + u.id + "'");
          joint_loss += items[i].loss;
          sum.add(items[i].grad);
          (u.origin == Origin::kSimulated ? stats.simulated_utts : stats.real_utts) += 1;
        }
        sgd_step(state.views(), std::as_const(sum).views(), cfg.learning_rate / batch.ids.size());
        stats.multi_batches += 1;
        stats.multi_utts += static_cast<int>(batch.ids.size());
        joint_time += seconds_since(t0);
        joint_count += static_cast<int>(batch.ids.size());
      } else {
        BackendBatchResult r =
            backend_batch(cfg, state.am, single_set, single_cached, batch.ids, aug_rng);
        if (!std::isfinite(r.loss_sum))
          throw NumericalError("divergence at epoch " + std::to_string(epoch + 1) +
                               " in a single-channel batch");
        single_loss += r.loss_sum;
        sgd_step(state.am.views(), std::as_const(r.grad_sum).views(),
                 cfg.learning_rate / batch.ids.size());
        stats.single_batches += 1;
        stats.single_utts += static_cast<int>(batch.ids.size());
        backend_time += seconds_since(t0);
        backend_count += static_cast<int>(batch.ids.size());
      }
      ++state.step;
    }
    stats.joint_loss = stats.multi_utts > 0 ? joint_loss / stats.multi_utts : 0.0;
    stats.single_loss = stats.single_utts > 0 ? single_loss / stats.single_utts : 0.0;
    stats.seconds = seconds_since(epoch_start);
    report.epochs.push_back(stats);
  }

  report.test_token_error = evaluate_token_error(state, test_set, cfg.stft_window, cfg.stft_hop,
                                                 &report.test_errors, &report.test_tokens);

  // T1: one joint sweep over the real multi-channel set; T2: one back-end
  // sweep over the single-channel set.
  const double per_joint = joint_count > 0 ? joint_time / joint_count : 0.0;
  double per_backend = backend_count > 0 ? backend_time / backend_count : 0.0;
  if (backend_count == 0 && !single_set.empty()) {
    const auto t0 = Clock::now();
    const FeatureMatrix f = single_features(cfg, single_set.front(), nullptr);
    backend_loss_and_grad(state.am, f, single_set.front().labels);
    per_backend = seconds_since(t0);
  }
  report.t1_seconds = per_joint * report.n_multi;
  report.t2_seconds = per_backend * report.n_single;
  report.predicted_epoch_seconds =
      epoch_cost_model(report.t1_seconds, report.t2_seconds, report.ratio, cfg.mode);
  double total = 0.0;
  for (const auto& e : report.epochs) total += e.seconds;
  report.measured_epoch_seconds = total / report.epochs.size();

  report.ratio_law_holds = true;
  report.augmentation_law_holds = true;
  for (const auto& e : report.epochs) {
    if (cfg.mode == Scheme::kDataScheduling) {
      const bool sweeps = e.multi_utts == report.n_multi && e.single_utts == report.n_single;
      // Equal batch counts (+-1) are only guaranteed when N * B is a whole
      // number; otherwise the rounded single batch size lets them drift.
      const double nb = report.ratio * cfg.multi_batch_size;
      const bool integral = std::abs(nb - std::round(nb)) < 1e-9;
      const bool balanced = !integral || report.n_single == 0 ||
                            std::abs(e.multi_batches - e.single_batches) <= 1;
      if (!sweeps || !balanced) report.ratio_law_holds = false;
    } else if (e.single_utts != 0) {
      report.ratio_law_holds = false;
    }
    const int expected_front_end =
        cfg.mode == Scheme::kSimulation ? report.n_multi + report.n_single : report.n_multi;
    if (e.multi_utts != expected_front_end) report.augmentation_law_holds = false;
  }

  report.final_state = std::move(state);
  return report;
}

namespace {

json epoch_to_json(const EpochStats& e) {
  return json{{"epoch", e.epoch},
              {"joint_loss", e.joint_loss},
              {"single_loss", e.single_loss},
              {"multi_batches", e.multi_batches},
              {"single_batches", e.single_batches},
              {"multi_utts", e.multi_utts},
              {"single_utts", e.single_utts},
              {"real_utts", e.real_utts},
              {"simulated_utts", e.simulated_utts},
              {"seconds", e.seconds}};
}

json room_to_json(const RoomConfig& cfg) { return json::parse(room_config_to_json(cfg)); }

}  // namespace

std::string Report::to_json() const {
  json epochs_json = json::array();
  for (const auto& e : epochs) epochs_json.push_back(epoch_to_json(e));
  json j{{"format", "beamlab-report"},
         {"version", 1},
         {"mode", to_string(config.mode)},
         {"seed", config.seed},
         {"config", json::parse(config_echo)},
         {"counts", {{"multi", n_multi}, {"single", n_single}, {"pooled", n_pooled}, {"ratio_n", ratio}}},
         {"pretrain_losses", pretrain_losses},
         {"epochs", epochs_json},
         {"test",
          {{"token_error_rate", test_token_error},
           {"substitutions", test_errors.substitutions},
           {"insertions", test_errors.insertions},
           {"deletions", test_errors.deletions},
           {"ref_tokens", test_tokens}}},
         {"cost_model",
          {{"single_stage", single_stage(config.mode)},
           {"augments_front_end", augments_front_end(config.mode)},
           {"t1_seconds", t1_seconds},
           {"t2_seconds", t2_seconds},
           {"predicted_epoch_seconds", predicted_epoch_seconds},
           {"measured_epoch_seconds", measured_epoch_seconds}}},
         {"laws",
          {{"ratio_law_holds", ratio_law_holds},
           {"augmentation_law_holds", augmentation_law_holds}}},
         {"final_step", final_state.step}};
  return j.dump(2);
}

ComparisonReport compare_schemes(const ScheduleConfig& base, const CorpusConfig& corpus,
                                 std::span<const std::uint64_t> seeds,
                                 std::span<const Scheme> schemes) {
  ComparisonReport out;
  for (Scheme s : schemes) out.schemes.push_back({s, {}, {}, 0.0, 0.0});
  for (std::uint64_t seed : seeds) {
    CorpusConfig cc = corpus;
    cc.seed = seed;
    cc.vocab_size = base.model.vocab_size;
    const ToyCorpus data = generate_toy_corpus(cc);
    for (auto& summary : out.schemes) {
      ScheduleConfig cfg = base;
      cfg.mode = summary.scheme;
      cfg.seed = seed;
      const Report r = run_training(cfg, data.multi, data.single, data.test);
      summary.seeds.push_back(seed);
      summary.token_errors.push_back(r.test_token_error);
      summary.mean_epoch_seconds += r.measured_epoch_seconds;
    }
  }
  for (auto& s : out.schemes) {
    if (s.token_errors.empty()) continue;
    s.mean_token_error = std::accumulate(s.token_errors.begin(), s.token_errors.end(), 0.0) /
                         s.token_errors.size();
    s.mean_epoch_seconds /= s.token_errors.size();
  }
  return out;
}

std::string ComparisonReport::to_json() const {
  json arr = json::array();
  for (const auto& s : schemes) {
    arr.push_back({{"scheme", to_string(s.scheme)},
                   {"single_stage", single_stage(s.scheme)},
                   {"augments_front_end", augments_front_end(s.scheme)},
                   {"seeds", s.seeds},
                   {"token_errors", s.token_errors},
                   {"mean_token_error", s.mean_token_error},
                   {"mean_epoch_seconds", s.mean_epoch_seconds}});
  }
  std::vector<std::string> order;
  std::vector<SchemeSummary> sorted = schemes;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.mean_token_error < b.mean_token_error;
  });
  for (const auto& s : sorted) order.push_back(to_string(s.scheme));
  return json{{"format", "beamlab-comparison"}, {"version", 1}, {"schemes", arr},
              {"ordering_best_first", order}}
      .dump(2);
}

std::string ComparisonReport::table() const {
  std::ostringstream os;
  os << std::left << std::setw(9) << "method" << std::setw(14) << "single-stage" << std::setw(8)
     << "aug FE" << std::setw(12) << "mean TER" << "mean s/epoch\n";
  os << std::fixed;
  for (const auto& s : schemes) {
    os << std::setw(9) << to_string(s.scheme) << std::setw(14)
       << (single_stage(s.scheme) ? "yes" : "no") << std::setw(8)
       << (augments_front_end(s.scheme) ? "yes" : "no") << std::setw(12) << std::setprecision(4)
       << s.mean_token_error << std::setprecision(3) << s.mean_epoch_seconds << '\n';
  }
  return os.str();
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!allowed.contains(key)) throw UsageError("unknown config key '" + where + key + "'");
}

}  // namespace

ScheduleConfig schedule_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed config: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("config must be a JSON object");
  reject_unknown(j,
                 {"mode", "epochs", "multi_batch_size", "learning_rate", "seed", "pretrain_epochs",
                  "simulation", "simulation_snr_db", "speed_perturb", "wav_augment",
                  "spec_augment", "workers", "stft_window", "stft_hop", "model"},
                 "");
  ScheduleConfig cfg;
  try {
    if (j.contains("mode")) cfg.mode = parse_scheme(j["mode"].get<std::string>());
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.multi_batch_size = j.value("multi_batch_size", cfg.multi_batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.pretrain_epochs = j.value("pretrain_epochs", cfg.pretrain_epochs);
    cfg.simulation_snr_db = j.value("simulation_snr_db", cfg.simulation_snr_db);
    cfg.speed_perturb = j.value("speed_perturb", cfg.speed_perturb);
    cfg.wav_augment = j.value("wav_augment", cfg.wav_augment);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.stft_window = j.value("stft_window", cfg.stft_window);
    cfg.stft_hop = j.value("stft_hop", cfg.stft_hop);
    if (j.contains("simulation")) cfg.simulation = parse_room_config(j["simulation"].dump());
    if (j.contains("spec_augment")) {
      const json& a = j["spec_augment"];
      reject_unknown(a, {"freq_masks", "freq_width", "time_masks", "time_width"}, "spec_augment.");
      cfg.spec_augment.freq_masks = a.value("freq_masks", 0);
      cfg.spec_augment.freq_width = a.value("freq_width", 0);
      cfg.spec_augment.time_masks = a.value("time_masks", 0);
      cfg.spec_augment.time_width = a.value("time_width", 0);
    }
    if (j.contains("model")) {
      const json& m = j["model"];
      reject_unknown(m,
                     {"vocab_size", "n_mels", "subsample", "mask_hidden", "am_context",
                      "am_hidden", "mvdr_loading"},
                     "model.");
      cfg.model.vocab_size = m.value("vocab_size", cfg.model.vocab_size);
      cfg.model.features.n_mels = m.value("n_mels", cfg.model.features.n_mels);
      cfg.model.features.subsample = m.value("subsample", cfg.model.features.subsample);
      cfg.model.mask_hidden = m.value("mask_hidden", cfg.model.mask_hidden);
      cfg.model.am_context = m.value("am_context", cfg.model.am_context);
      cfg.model.am_hidden = m.value("am_hidden", cfg.model.am_hidden);
      cfg.model.mvdr.loading = m.value("mvdr_loading", cfg.model.mvdr.loading);
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid config value: ") + e.what());
  } catch (const DataError& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

std::string schedule_config_to_json(const ScheduleConfig& cfg) {
  json j{{"mode", to_string(cfg.mode)},
         {"epochs", cfg.epochs},
         {"multi_batch_size", cfg.multi_batch_size},
         {"learning_rate", cfg.learning_rate},
         {"seed", cfg.seed},
         {"pretrain_epochs", cfg.pretrain_epochs},
         {"simulation", room_to_json(cfg.simulation)},
         {"simulation_snr_db", cfg.simulation_snr_db},
         {"speed_perturb", cfg.speed_perturb},
         {"wav_augment", cfg.wav_augment},
         {"spec_augment",
          {{"freq_masks", cfg.spec_augment.freq_masks},
           {"freq_width", cfg.spec_augment.freq_width},
           {"time_masks", cfg.spec_augment.time_masks},
           {"time_width", cfg.spec_augment.time_width}}},
         {"workers", cfg.workers},
         {"stft_window", cfg.stft_window},
         {"stft_hop", cfg.stft_hop},
         {"model",
          {{"vocab_size", cfg.model.vocab_size},
           {"n_mels", cfg.model.features.n_mels},
           {"subsample", cfg.model.features.subsample},
           {"mask_hidden", cfg.model.mask_hidden},
           {"am_context", cfg.model.am_context},
           {"am_hidden", cfg.model.am_hidden},
           {"mvdr_loading", cfg.model.mvdr.loading}}}};
  return j.dump(2);
}

CorpusConfig corpus_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed corpus config: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("corpus config must be a JSON object");
  reject_unknown(j,
                 {"n_multi", "n_single", "n_test", "vocab_size", "seed", "snr_db", "min_tokens",
                  "max_tokens", "cover_vocabulary", "sample_rate", "room"},
                 "corpus.");
  CorpusConfig c;
  try {
    c.n_multi = j.value("n_multi", c.n_multi);
    c.n_single = j.value("n_single", c.n_single);
    c.n_test = j.value("n_test", c.n_test);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.seed = j.value("seed", c.seed);
    c.snr_db = j.value("snr_db", c.snr_db);
    c.min_tokens = j.value("min_tokens", c.min_tokens);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.cover_vocabulary = j.value("cover_vocabulary", c.cover_vocabulary);
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    if (j.contains("room")) c.room = parse_room_config(j["room"].dump());
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid corpus config value: ") + e.what());
  } catch (const DataError& e) {
    throw UsageError(std::string("invalid corpus config: ") + e.what());
  }
  return c;
}

std::vector<Utterance> load_utterances(const std::string& manifest_path) {
  const Manifest m = load_manifest(manifest_path);
  std::vector<Utterance> out;
  out.reserve(m.size());
  for (const auto& e : m) {
    Waveform w = read_wav(resolve_audio_path(manifest_path, e));
    if (w.num_channels() != e.channels)
      throw DataError("utterance '" + e.id + "': channel count does not match the manifest");
    out.push_back({e.id, std::move(w), e.tokens, e.origin});
  }
  return out;
}

}  // namespace beamlab
