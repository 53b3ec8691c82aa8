#include "beamlab/sched.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "beamlab/error.h"

namespace beamlab {
namespace {

std::vector<int> iota_ids(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

TEST(Scheme, ParseAndPrint) {
  EXPECT_EQ(parse_scheme("PT"), Scheme::kPretrain);
  EXPECT_EQ(parse_scheme("ds"), Scheme::kDataScheduling);
  EXPECT_EQ(parse_scheme("Simu"), Scheme::kSimulation);
  EXPECT_EQ(parse_scheme("JO_ONLY"), Scheme::kJointOnly);
  for (Scheme s : {Scheme::kPretrain, Scheme::kDataScheduling, Scheme::kSimulation,
                   Scheme::kJointOnly})
    EXPECT_EQ(parse_scheme(to_string(s)), s);
  EXPECT_THROW(parse_scheme("joint"), UsageError);
}

TEST(PlanEpoch, RatioRuleExample) {
  ScheduleConfig cfg;
  cfg.mode = Scheme::kDataScheduling;
  cfg.multi_batch_size = 10;
  std::mt19937_64 rng(1);
  const auto multi = iota_ids(50), single = iota_ids(100);
  const BatchPlan plan = plan_epoch(multi, single, cfg, rng);
  EXPECT_DOUBLE_EQ(plan.ratio, 2.0);
  EXPECT_EQ(plan.single_batch_size, 20);
  EXPECT_EQ(plan.count(BatchKind::kMulti), 5);
  EXPECT_EQ(plan.count(BatchKind::kSingle), 5);

  std::multiset<int> seen_m, seen_s;
  for (const auto& b : plan.batches)
    for (int id : b.ids) (b.kind == BatchKind::kMulti ? seen_m : seen_s).insert(id);
  EXPECT_EQ(seen_m, std::multiset<int>(multi.begin(), multi.end()));
  EXPECT_EQ(seen_s, std::multiset<int>(single.begin(), single.end()));
}

TEST(PlanEpoch, CountsStayWithinOneBatchForUnevenSplits) {
  ScheduleConfig cfg;
  cfg.mode = Scheme::kDataScheduling;
  // Splits where N * B is a whole number.
  for (int b : {1, 2, 3, 6})
    for (auto [nm, ns] : {std::pair{12, 18}, {6, 30}, {50, 100}, {12, 4}}) {
      if (std::abs(double(ns) / nm * b - std::round(double(ns) / nm * b)) > 1e-9) continue;
      cfg.multi_batch_size = b;
      std::mt19937_64 rng(b * 100 + nm);
      const BatchPlan p = plan_epoch(iota_ids(nm), iota_ids(ns), cfg, rng);
      EXPECT_EQ(p.utterances(BatchKind::kMulti), nm);
      EXPECT_EQ(p.utterances(BatchKind::kSingle), ns);
      EXPECT_LE(std::abs(p.count(BatchKind::kMulti) - p.count(BatchKind::kSingle)), 1)
          << "B=" << b << " multi=" << nm << " single=" << ns;
    }
}

TEST(PlanEpoch, RoundedSingleBatchSizeStillSweepsEverything) {
  ScheduleConfig cfg;
  cfg.mode = Scheme::kDataScheduling;
  cfg.multi_batch_size = 1;
  std::mt19937_64 rng(4);
  // N = 1.3 rounds to single batches of one utterance.
  const BatchPlan p = plan_epoch(iota_ids(10), iota_ids(13), cfg, rng);
  EXPECT_EQ(p.single_batch_size, 1);
  EXPECT_EQ(p.count(BatchKind::kMulti), 10);
  EXPECT_EQ(p.count(BatchKind::kSingle), 13);
}

TEST(PlanEpoch, JointOnlyHasMultiBatchesOnly) {
  ScheduleConfig cfg;
  cfg.mode = Scheme::kJointOnly;
  cfg.multi_batch_size = 4;
  std::mt19937_64 rng(3);
  const BatchPlan p = plan_epoch(iota_ids(10), {}, cfg, rng);
  EXPECT_EQ(p.count(BatchKind::kSingle), 0);
  EXPECT_EQ(p.count(BatchKind::kMulti), 3);
  EXPECT_EQ(p.utterances(BatchKind::kMulti), 10);
}

TEST(PlanEpoch, DeterministicForASeed) {
  ScheduleConfig cfg;
  cfg.mode = Scheme::kDataScheduling;
  auto run = [&](std::uint64_t seed) {
    std::mt19937_64 rng = rng_stream(seed, static_cast<std::uint64_t>(StreamPurpose::kPlan));
    std::vector<std::pair<int, std::vector<int>>> out;
    for (const auto& b : plan_epoch(iota_ids(20), iota_ids(30), cfg, rng).batches)
      out.emplace_back(static_cast<int>(b.kind), b.ids);
    return out;
  };
  EXPECT_EQ(run(5), run(5));
  EXPECT_NE(run(5), run(6));
}

TEST(PlanEpoch, EmptyMultiSetIsAnError) {
  ScheduleConfig cfg;
  cfg.mode = Scheme::kDataScheduling;
  std::mt19937_64 rng(1);
  EXPECT_THROW(plan_epoch({}, iota_ids(3), cfg, rng), DataError);
}

TEST(SingleBatchSize, RoundsAndStaysPositive) {
  EXPECT_EQ(single_batch_size(50, 100, 10), 20);
  EXPECT_EQ(single_batch_size(10, 12, 2), 2);  // N = 1.2, 2.4 -> 2
  EXPECT_EQ(single_batch_size(10, 13, 2), 3);  // 2.6 -> 3
  EXPECT_EQ(single_batch_size(10, 1, 2), 1);
  EXPECT_THROW(single_batch_size(0, 10, 2), DataError);
}

TEST(CostModel, TableRows) {
  EXPECT_EQ(epoch_cost_model(3.0, 0.5, 4.0, Scheme::kPretrain), 3.0);
  EXPECT_EQ(epoch_cost_model(3.0, 0.5, 4.0, Scheme::kDataScheduling), 3.5);
  EXPECT_EQ(epoch_cost_model(3.0, 0.5, 4.0, Scheme::kSimulation), 15.0);
  EXPECT_EQ(epoch_cost_model(3.0, 0.5, 4.0, Scheme::kJointOnly), 3.0);
  const double t1 = 10.0, t2 = 1.0;
  EXPECT_DOUBLE_EQ(epoch_cost_model(t1, t2, 1.2, Scheme::kDataScheduling), 1.1 * t1);
  EXPECT_DOUBLE_EQ(epoch_cost_model(t1, t2, 1.2, Scheme::kSimulation), 2.2 * t1);
  EXPECT_EQ(epoch_cost_model(t1, t2, 0.0, Scheme::kSimulation),
            epoch_cost_model(t1, t2, 0.0, Scheme::kPretrain));
  EXPECT_THROW(epoch_cost_model(-1.0, 1.0, 1.0, Scheme::kPretrain), DataError);
  EXPECT_THROW(epoch_cost_model(1.0, 1.0, -0.5, Scheme::kSimulation), DataError);
}

TEST(CostModel, TableColumns) {
  EXPECT_FALSE(single_stage(Scheme::kPretrain));
  EXPECT_TRUE(single_stage(Scheme::kDataScheduling));
  EXPECT_TRUE(single_stage(Scheme::kSimulation));
  EXPECT_FALSE(augments_front_end(Scheme::kPretrain));
  EXPECT_FALSE(augments_front_end(Scheme::kDataScheduling));
  EXPECT_TRUE(augments_front_end(Scheme::kSimulation));
}

// ---------------------------------------------------------------- corpus

CorpusConfig small_corpus(int n_multi, int n_single, int n_test, std::uint64_t seed = 7) {
  CorpusConfig c;
  c.n_multi = n_multi;
  c.n_single = n_single;
  c.n_test = n_test;
  c.seed = seed;
  return c;
}

TEST(ToyCorpus, EmptyRequest) {
  const ToyCorpus c = generate_toy_corpus(small_corpus(0, 0, 0));
  EXPECT_TRUE(c.multi.empty());
  EXPECT_TRUE(c.single.empty());
  EXPECT_TRUE(c.test.empty());
  EXPECT_EQ(c.vocabulary.size(), 4u);
}

TEST(ToyCorpus, DeterministicForASeed) {
  const ToyCorpus a = generate_toy_corpus(small_corpus(2, 3, 1));
  const ToyCorpus b = generate_toy_corpus(small_corpus(2, 3, 1));
  ASSERT_EQ(a.multi.size(), 2u);
  for (std::size_t i = 0; i < a.multi.size(); ++i) {
    EXPECT_EQ(a.multi[i].id, b.multi[i].id);
    EXPECT_EQ(a.multi[i].labels, b.multi[i].labels);
    EXPECT_EQ(a.multi[i].wave.samples, b.multi[i].wave.samples);
  }
  for (std::size_t i = 0; i < a.single.size(); ++i)
    EXPECT_EQ(a.single[i].wave.samples, b.single[i].wave.samples);
  const ToyCorpus c = generate_toy_corpus(small_corpus(2, 3, 1, 8));
  EXPECT_NE(a.single[0].wave.samples, c.single[0].wave.samples);
}

TEST(ToyCorpus, ShapesAndLabels) {
  const CorpusConfig cfg = small_corpus(3, 5, 2);
  const ToyCorpus c = generate_toy_corpus(cfg);
  for (const auto& u : c.multi) {
    EXPECT_EQ(u.wave.num_channels(), 6);
    EXPECT_EQ(u.origin, Origin::kReal);
  }
  for (const auto& u : c.test) EXPECT_EQ(u.wave.num_channels(), 6);
  for (const auto* set : {&c.multi, &c.single, &c.test})
    for (const auto& u : *set) {
      ASSERT_GE(static_cast<int>(u.labels.size()), cfg.min_tokens);
      ASSERT_LE(static_cast<int>(u.labels.size()), cfg.max_tokens);
      std::set<int> kinds(u.labels.begin(), u.labels.end());
      EXPECT_EQ(static_cast<int>(kinds.size()), cfg.vocab_size) << u.id;
      for (std::size_t i = 1; i < u.labels.size(); ++i) EXPECT_NE(u.labels[i], u.labels[i - 1]);
    }
  for (const auto& u : c.single) EXPECT_EQ(u.wave.num_channels(), 1);
}

TEST(ToyCorpus, CoverageNeedsEnoughTokens) {
  CorpusConfig cfg = small_corpus(1, 1, 1);
  cfg.vocab_size = 8;
  EXPECT_THROW(generate_toy_corpus(cfg), DataError);
  cfg.min_tokens = cfg.max_tokens = 8;
  EXPECT_NO_THROW(generate_toy_corpus(cfg));
}

// Oracle: split the clean signal into bursts at silent frames and name each
// burst by the token frequency nearest to its spectral peak.
LabelSequence band_energy_classifier(const Waveform& w, int vocab_size) {
  const Spectrogram s = stft(w, 512, 128);
  LabelSequence out;
  std::vector<double> votes(vocab_size + 1, 0.0);
  bool in_burst = false;
  auto flush = [&] {
    out.push_back(static_cast<int>(std::max_element(votes.begin() + 1, votes.end()) - votes.begin()));
    std::fill(votes.begin(), votes.end(), 0.0);
  };
  for (int t = 0; t < s.frames; ++t) {
    int peak = 0;
    double energy = 0.0;
    for (int f = 0; f < s.bins; ++f) {
      energy += std::norm(s.at(t, f, 0));
      if (std::norm(s.at(t, f, 0)) > std::norm(s.at(t, peak, 0))) peak = f;
    }
    if (energy < 1e-6) {
      if (in_burst) flush();
      in_burst = false;
      continue;
    }
    in_burst = true;
    const double hz = peak * 16000.0 / 512;
    int best = 1;
    for (int k = 2; k <= vocab_size; ++k)
      if (std::abs(std::log(hz / token_frequency(k, vocab_size))) <
          std::abs(std::log(hz / token_frequency(best, vocab_size))))
        best = k;
    votes[best] += energy;
  }
  if (in_burst) flush();
  return out;
}

TEST(ToyCorpus, BandEnergyClassifierRecoversCleanLabels) {
  for (int vocab : {4, 8}) {
    CorpusConfig cfg = small_corpus(0, 20, 0, 11);
    cfg.vocab_size = vocab;
    cfg.min_tokens = std::max(cfg.min_tokens, vocab);
    cfg.max_tokens = std::max(cfg.max_tokens, vocab + 2);
    for (const auto& u : generate_toy_corpus(cfg).single)
      EXPECT_EQ(band_energy_classifier(u.wave, vocab), u.labels) << u.id;
  }
}

TEST(RenderMultichannel, KeepsLengthAndInfiniteSnrIsTheImage) {
  const ToyCorpus c = generate_toy_corpus(small_corpus(0, 1, 0));
  const Waveform& clean = c.single[0].wave;
  RoomSpec room;
  const Rir rir = image_source_rir(room, chime4_array(kDefaultArrayCenter), {.max_order = 2});
  std::mt19937_64 rng(1);
  const Waveform img = render_multichannel(clean, rir, kInfiniteSnr, rng);
  EXPECT_EQ(img.num_samples(), clean.num_samples());
  EXPECT_EQ(img.num_channels(), 6);
  const Waveform full = simulate_multichannel(clean, rir);
  for (int c2 = 0; c2 < 6; ++c2)
    for (int i = 0; i < clean.num_samples(); ++i)
      EXPECT_EQ(img.samples[c2][i], full.samples[c2][i]);
}

TEST(SpeedPerturb, IdentityAndLength) {
  Waveform w = Waveform::zeros(1, 1000, 16000);
  for (int i = 0; i < 1000; ++i) w.samples[0][i] = std::sin(0.01 * i);
  EXPECT_EQ(speed_perturb(w, 1.0).samples, w.samples);
  EXPECT_EQ(speed_perturb(w, 1.1).num_samples(), 909);
  EXPECT_EQ(speed_perturb(w, 0.9).num_samples(), 1111);
  EXPECT_THROW(speed_perturb(w, 0.0), DataError);
}

// ---------------------------------------------------------------- training

struct SmallRun {
  ToyCorpus corpus;
  ScheduleConfig cfg;
};

SmallRun small_run(Scheme mode, int n_multi, int n_single) {
  SmallRun r{generate_toy_corpus(small_corpus(n_multi, n_single, 2)), ScheduleConfig{}};
  r.cfg.mode = mode;
  r.cfg.epochs = 1;
  r.cfg.pretrain_epochs = 2;
  r.cfg.multi_batch_size = 2;
  r.cfg.model.am_hidden = 16;
  return r;
}

TEST(Pretrain, ZeroEpochsReturnsTheInitialization) {
  SmallRun r = small_run(Scheme::kPretrain, 0, 4);
  r.cfg.pretrain_epochs = 0;
  const PretrainResult p = run_pretrain(r.cfg, r.corpus.single);
  EXPECT_TRUE(p.epoch_losses.empty());
  EXPECT_EQ(checkpoint_to_json(p.state),
            checkpoint_to_json(TrainState::initialize(r.cfg.model, r.cfg.seed)));
}

TEST(Pretrain, LossDecreasesAndIsReproducible) {
  SmallRun r = small_run(Scheme::kPretrain, 0, 16);
  r.cfg.pretrain_epochs = 6;
  r.cfg.learning_rate = 0.02;
  const PretrainResult a = run_pretrain(r.cfg, r.corpus.single);
  ASSERT_EQ(a.epoch_losses.size(), 6u);
  for (std::size_t e = 1; e < a.epoch_losses.size(); ++e)
    EXPECT_LE(a.epoch_losses[e], a.epoch_losses[e - 1] * 1.05) << "epoch " << e;
  EXPECT_LT(a.epoch_losses.back(), a.epoch_losses.front());
  const PretrainResult b = run_pretrain(r.cfg, r.corpus.single);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_EQ(checkpoint_to_json(a.state), checkpoint_to_json(b.state));
  // Front-end parameters are untouched.
  const TrainState init = TrainState::initialize(r.cfg.model, r.cfg.seed);
  const auto mv = a.state.mask.views();
  const auto iv = init.mask.views();
  for (std::size_t k = 0; k < mv.size(); ++k)
    EXPECT_TRUE(std::equal(mv[k].values.begin(), mv[k].values.end(), iv[k].values.begin()));
}

TEST(Training, DataSchedulingSweepsBothSets) {
  SmallRun r = small_run(Scheme::kDataScheduling, 4, 8);
  r.cfg.epochs = 2;
  const Report rep = run_training(r.cfg, r.corpus.multi, r.corpus.single, r.corpus.test);
  ASSERT_EQ(rep.epochs.size(), 2u);
  EXPECT_DOUBLE_EQ(rep.ratio, 2.0);
  for (const EpochStats& e : rep.epochs) {
    EXPECT_EQ(e.multi_utts, 4);
    EXPECT_EQ(e.single_utts, 8);
    EXPECT_EQ(e.multi_batches, 2);
    EXPECT_EQ(e.single_batches, 2);
    EXPECT_EQ(e.simulated_utts, 0);
  }
  EXPECT_TRUE(rep.ratio_law_holds);
  EXPECT_TRUE(rep.augmentation_law_holds);
  EXPECT_NEAR(rep.predicted_epoch_seconds, rep.t1_seconds + rep.t2_seconds, 1e-12);
}

TEST(Training, SimulationPoolsRenderedSingles) {
  SmallRun r = small_run(Scheme::kSimulation, 3, 6);
  r.cfg.simulation.rir.max_order = 3;
  const Report rep = run_training(r.cfg, r.corpus.multi, r.corpus.single, r.corpus.test);
  EXPECT_EQ(rep.n_pooled, 9);
  const EpochStats& e = rep.epochs.at(0);
  EXPECT_EQ(e.multi_utts, 9);
  EXPECT_EQ(e.real_utts, 3);
  EXPECT_EQ(e.simulated_utts, 6);
  EXPECT_EQ(e.single_utts, 0);
  EXPECT_TRUE(rep.augmentation_law_holds);
  EXPECT_NEAR(rep.predicted_epoch_seconds, (1.0 + rep.ratio) * rep.t1_seconds, 1e-12);
}

TEST(Training, PretrainThenJoint) {
  SmallRun r = small_run(Scheme::kPretrain, 3, 6);
  const Report rep = run_training(r.cfg, r.corpus.multi, r.corpus.single, r.corpus.test);
  EXPECT_EQ(rep.pretrain_losses.size(), 2u);
  EXPECT_EQ(rep.epochs.at(0).multi_utts, 3);
  EXPECT_EQ(rep.epochs.at(0).single_utts, 0);
  EXPECT_TRUE(rep.augmentation_law_holds);
  EXPECT_GE(rep.test_token_error, 0.0);
  EXPECT_GT(rep.test_tokens, 0);
}

TEST(Training, EmptySingleSetReducesEverySchemeToJointOnly) {
  SmallRun base = small_run(Scheme::kJointOnly, 3, 0);
  base.cfg.epochs = 2;
  const Report jo = run_training(base.cfg, base.corpus.multi, {}, base.corpus.test);
  const std::string jo_state = checkpoint_to_json(jo.final_state);
  for (Scheme s : {Scheme::kPretrain, Scheme::kDataScheduling, Scheme::kSimulation}) {
    ScheduleConfig cfg = base.cfg;
    cfg.mode = s;
    const Report rep = run_training(cfg, base.corpus.multi, {}, base.corpus.test);
    ASSERT_EQ(rep.epochs.size(), jo.epochs.size());
    for (std::size_t e = 0; e < jo.epochs.size(); ++e)
      EXPECT_EQ(rep.epochs[e].joint_loss, jo.epochs[e].joint_loss) << to_string(s);
    EXPECT_EQ(checkpoint_to_json(rep.final_state), jo_state) << to_string(s);
    EXPECT_EQ(rep.test_token_error, jo.test_token_error);
  }
}

TEST(Training, ReproducibleLossTrajectory) {
  SmallRun r = small_run(Scheme::kDataScheduling, 3, 5);
  const Report a = run_training(r.cfg, r.corpus.multi, r.corpus.single, r.corpus.test);
  const Report b = run_training(r.cfg, r.corpus.multi, r.corpus.single, r.corpus.test);
  EXPECT_EQ(a.epochs[0].joint_loss, b.epochs[0].joint_loss);
  EXPECT_EQ(a.epochs[0].single_loss, b.epochs[0].single_loss);
  EXPECT_EQ(checkpoint_to_json(a.final_state), checkpoint_to_json(b.final_state));
}

TEST(Training, ReportJsonIsSelfContained) {
  SmallRun r = small_run(Scheme::kDataScheduling, 2, 2);
  r.cfg.seed = 9;
  const Report rep = run_training(r.cfg, r.corpus.multi, r.corpus.single, r.corpus.test);
  const auto j = nlohmann::json::parse(rep.to_json());
  EXPECT_EQ(j.at("mode"), "DS");
  EXPECT_EQ(j.at("seed"), 9);
  EXPECT_EQ(j.at("epochs").size(), 1u);
  EXPECT_TRUE(j.at("laws").at("ratio_law_holds").get<bool>());
  EXPECT_TRUE(j.at("cost_model").contains("predicted_epoch_seconds"));
  EXPECT_TRUE(j.at("test").contains("token_error_rate"));
}

TEST(Training, RejectsEmptyMultiSetAndMultiChannelSingles) {
  SmallRun r = small_run(Scheme::kDataScheduling, 2, 2);
  EXPECT_THROW(run_training(r.cfg, {}, r.corpus.single, r.corpus.test), DataError);
  EXPECT_THROW(run_training(r.cfg, r.corpus.multi, r.corpus.multi, r.corpus.test), DataError);
}

// ---------------------------------------------------------------- config

TEST(ScheduleConfigJson, RoundTrip) {
  ScheduleConfig cfg;
  cfg.mode = Scheme::kSimulation;
  cfg.epochs = 7;
  cfg.learning_rate = 0.03;
  cfg.seed = 123;
  cfg.model.am_hidden = 12;
  cfg.spec_augment.freq_masks = 2;
  const ScheduleConfig back = schedule_config_from_json(schedule_config_to_json(cfg));
  EXPECT_EQ(back.mode, cfg.mode);
  EXPECT_EQ(back.epochs, 7);
  EXPECT_EQ(back.learning_rate, 0.03);
  EXPECT_EQ(back.seed, 123u);
  EXPECT_EQ(back.model.am_hidden, 12);
  EXPECT_EQ(back.spec_augment.freq_masks, 2);
  EXPECT_EQ(schedule_config_to_json(back), schedule_config_to_json(cfg));
}

TEST(ScheduleConfigJson, Rejections) {
  EXPECT_THROW(schedule_config_from_json(R"({"epoch": 3})"), UsageError);
  EXPECT_THROW(schedule_config_from_json(R"({"model": {"hidden": 3}})"), UsageError);
  EXPECT_THROW(schedule_config_from_json(R"({"mode": "JOINT"})"), UsageError);
  EXPECT_THROW(schedule_config_from_json(R"({"epochs": 0})"), UsageError);
  EXPECT_THROW(schedule_config_from_json(R"({"stft_window": 500})"), UsageError);
  EXPECT_THROW(schedule_config_from_json("[]"), UsageError);
}

TEST(ScheduleConfigJson, ShippedConfigsParse) {
  for (const char* name : {"toy_jo.json", "toy_pt.json", "toy_ds.json", "toy_simu.json",
                           "compare.json"}) {
    std::ifstream in(std::string(BEAMLAB_SOURCE_DIR) + "/configs/" + name);
    ASSERT_TRUE(in) << name;
    const auto j = nlohmann::json::parse(in);
    EXPECT_NO_THROW(schedule_config_from_json(j.at("schedule").dump())) << name;
    EXPECT_NO_THROW(corpus_config_from_json(j.at("corpus").dump())) << name;
  }
}

TEST(CorpusConfigJson, UnknownKey) {
  EXPECT_THROW(corpus_config_from_json(R"({"n_multii": 3})"), UsageError);
  EXPECT_EQ(corpus_config_from_json(R"({"n_multi": 3})").n_multi, 3);
}

}  // namespace
}  // namespace beamlab
