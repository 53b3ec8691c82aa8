#include "cli.h"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "beamlab/error.h"

namespace beamlab::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
  if (!out) throw DataError("failed writing " + path);
}

json parse_config_object(const std::string& text, const std::string& what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError("malformed " + what + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError(what + " must be a JSON object");
  return j;
}

// Options of one subcommand that may also come from its --config file. The
// file key is the long flag name with dashes replaced by underscores.
class FileBackedOptions {
 public:
  explicit FileBackedOptions(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON file with defaults for these options");
  }

  template <typename T>
  CLI::Option* option(const std::string& flag, T& target, const std::string& help) {
    CLI::Option* opt = app_->add_option(flag, target, help);
    remember(flag, opt, [&target](const json& j) { target = j.get<T>(); });
    return opt;
  }

  CLI::Option* flag(const std::string& flag, bool& target, const std::string& help) {
    CLI::Option* opt = app_->add_flag(flag, target, help);
    remember(flag, opt, [&target](const json& j) { target = j.get<bool>(); });
    return opt;
  }

  // Fills every option that was not given on the command line from the file.
  void apply() {
    if (config_path_.empty()) return;
    const json j = parse_config_object(read_text(config_path_), "config " + config_path_);
    for (const auto& [key, value] : j.items()) {
      auto it = entries_.find(key);
      if (it == entries_.end()) throw UsageError("unknown config key '" + key + "'");
      if (it->second.opt->count() > 0) continue;
      try {
        it->second.set(value);
      } catch (const json::exception& e) {
        throw UsageError("invalid value for config key '" + key + "': " + e.what());
      }
    }
  }

  bool given(const std::string& flag) const { return app_->get_option(flag)->count() > 0; }

 private:
  struct Entry {
    CLI::Option* opt;
    std::function<void(const json&)> set;
  };

  static std::string key_of(const std::string& flag) {
    std::string key = flag.substr(flag.find_first_not_of('-'));
    std::replace(key.begin(), key.end(), '-', '_');
    return key;
  }

  void remember(const std::string& flag, CLI::Option* opt, std::function<void(const json&)> set) {
    entries_[key_of(flag)] = Entry{opt, std::move(set)};
  }

  CLI::App* app_;
  std::string config_path_;
  std::map<std::string, Entry> entries_;
};

// Seed precedence: --seed, then BEAMLAB_SEED, then the config file, then the default.
std::uint64_t resolve_seed(const FileBackedOptions& opts, std::uint64_t current) {
  if (opts.given("--seed")) return current;
  if (auto s = env_seed()) return *s;
  return current;
}

int report_error(std::ostream& err, const Error& e) {
  err << "error: " << e.what() << '\n';
  return static_cast<int>(e.kind());
}

// ---------------------------------------------------------------- enhance

struct EnhanceOptions {
  std::string input;
  std::string output;
  std::string masks = "checkpoint";
  std::string checkpoint;
  std::string clean;
  int ref = -1;
  bool one_hot = false;
  int window = 512;
  int hop = 128;
};

std::vector<double> difference(const std::vector<double>& a, const std::vector<double>& b,
                               std::size_t begin, std::size_t end) {
  std::vector<double> d(end - begin);
  for (std::size_t i = begin; i < end; ++i) d[i - begin] = a[i] - b[i];
  return d;
}

int cmd_enhance(const EnhanceOptions& o, std::ostream& out) {
  if (o.masks != "oracle" && o.masks != "checkpoint")
    throw UsageError("--masks must be 'oracle' or 'checkpoint'");
  const Waveform in = read_wav(o.input);
  if (in.num_channels() < 2)
    throw DataError(o.input + " has a single channel; there is nothing to beamform (copy the file "
                    "to pass it through unchanged)");
  const int channels = in.num_channels();
  if (o.ref >= channels) throw UsageError("--ref is out of range for a " +
                                          std::to_string(channels) + "-channel input");

  std::optional<Waveform> clean;
  if (!o.clean.empty()) {
    clean = read_wav(o.clean);
    if (clean->sample_rate != in.sample_rate)
      throw DataError("clean reference sample rate does not match the input");
    if (clean->num_samples() != in.num_samples())
      throw DataError("clean reference length does not match the input");
    if (clean->num_channels() != 1 && clean->num_channels() != channels)
      throw DataError("clean reference must be mono or have one channel per microphone");
  }

  const Spectrogram spec = stft(in, o.window, o.hop);
  BeamWeights weights;
  int ref = o.ref;
  if (o.masks == "oracle") {
    if (!clean || clean->num_channels() != channels)
      throw UsageError("--masks oracle needs --clean with the multi-channel speech image");
    Waveform noise = in;
    for (int c = 0; c < channels; ++c)
      for (int n = 0; n < in.num_samples(); ++n) noise.samples[c][n] -= clean->samples[c][n];
    const Spectrogram clean_spec = stft(*clean, o.window, o.hop);
    const Spectrogram noise_spec = stft(noise, o.window, o.hop);
    if (ref < 0)
      ref = select_reference(
          estimate_psd(clean_spec, TFMask::filled(spec.frames, spec.bins, 1.0, MaskTarget::kSpeech)));
    const auto [speech_mask, noise_mask] = oracle_masks(clean_spec, noise_spec, ref);
    const PsdPair psd{estimate_psd(spec, speech_mask), estimate_psd(spec, noise_mask)};
    weights = mvdr_weights(psd, ref);
  } else {
    if (o.checkpoint.empty()) throw UsageError("--masks checkpoint needs --checkpoint");
    const TrainState state = load_checkpoint(o.checkpoint);
    JointOptions jo;
    if (ref >= 0) jo.ref_channel = ref;
    FrontEndOutput fe = frontend_forward(state, spec, jo);
    ref = fe.ref_channel;
    weights = std::move(fe.weights);
  }
  if (o.one_hot) weights = BeamWeights::one_hot(spec.bins, channels, ref);

  Waveform enhanced = istft(apply_beamformer(weights, spec));
  enhanced.samples[0].resize(in.num_samples(), 0.0);
  write_wav(o.output, enhanced, SampleFormat::kFloat32);
  out << "reference channel " << ref << '\n';
  out << "wrote " << o.output << '\n';

  if (clean) {
    const std::vector<double>& target = clean->samples[clean->num_channels() == 1 ? 0 : ref];
    // The first and last window are not fully overlapped by the synthesis.
    const std::size_t begin = static_cast<std::size_t>(o.window);
    const std::size_t end = std::min<std::size_t>(
        in.num_samples() > 2 * o.window ? in.num_samples() - o.window : 0,
        static_cast<std::size_t>(spec.frames - 1) * o.hop + 1);
    if (end <= begin) throw DataError("input too short to score against the clean reference");
    const std::span<const double> s(target.data() + begin, end - begin);
    const double snr_in = snr_db(s, difference(in.samples[ref], target, begin, end));
    const double snr_out = snr_db(s, difference(enhanced.samples[0], target, begin, end));
    out << std::fixed << std::setprecision(2) << "input SNR " << snr_in << " dB, output SNR "
        << snr_out << " dB, gain " << snr_out - snr_in << " dB\n";
  }
  return 0;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
  std::string manifest;
  std::string room;
  std::string out_dir;
  double snr = kInfiniteSnr;
  std::uint64_t seed = 1;
};

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
  const Manifest input = load_manifest(o.manifest);
  const RoomConfig room = o.room.empty() ? [] {
    RoomConfig r;
    r.array = chime4_array(kDefaultArrayCenter);
    return r;
  }() : load_room_config(o.room);
  fs::create_directories(o.out_dir);

  std::map<int, Rir> rirs;  // by sample rate
  std::mt19937_64 noise = rng_stream(o.seed, static_cast<std::uint64_t>(StreamPurpose::kSimulation));
  Manifest output;
  for (const auto& e : input) {
    const Waveform wave = read_wav(resolve_audio_path(o.manifest, e));
    if (wave.num_channels() != 1)
      throw DataError("utterance '" + e.id + "' is not single-channel");
    auto it = rirs.find(wave.sample_rate);
    if (it == rirs.end()) {
      RirOptions opts = room.rir;
      opts.sample_rate = wave.sample_rate;
      it = rirs.emplace(wave.sample_rate, image_source_rir(room.room, room.array, opts)).first;
    }
    const Waveform multi = render_multichannel(wave, it->second, o.snr, noise);
    ManifestEntry m = e;
    m.path = e.id + ".wav";
    m.channels = multi.num_channels();
    m.sample_rate = multi.sample_rate;
    m.duration = static_cast<double>(multi.num_samples()) / multi.sample_rate;
    m.origin = Origin::kSimulated;
    write_wav((fs::path(o.out_dir) / m.path).string(), multi, SampleFormat::kFloat32);
    output.push_back(std::move(m));
  }
  const std::string manifest_path = (fs::path(o.out_dir) / "manifest.jsonl").string();
  save_manifest(manifest_path, output);
  out << "simulated " << output.size() << " utterances with " << room.array.channels()
      << " microphones -> " << manifest_path << '\n';
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string config;
  std::string mode;
  int epochs = 0;
  std::uint64_t seed = 0;
  double lr = 0.0;
  int workers = 0;
  std::string report;
  std::string checkpoint;
  std::string compare;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw UsageError("--compare expects comma-separated seeds, got '" + text + "'");
    seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw UsageError("--compare needs at least one seed");
  return seeds;
}

int cmd_compare(const TrainJob& job, const std::string& seed_list, std::ostream& out) {
  if (!job.corpus) throw UsageError("--compare needs a generated corpus, not manifests");
  const std::vector<std::uint64_t> seeds = parse_seed_list(seed_list);
  const Scheme schemes[] = {Scheme::kPretrain, Scheme::kDataScheduling, Scheme::kSimulation,
                            Scheme::kJointOnly};
  const ComparisonReport r = compare_schemes(job.schedule, *job.corpus, seeds, schemes);
  if (!job.report_path.empty()) write_text(job.report_path, r.to_json() + "\n");
  out << r.table();
  out << "ordering (best first):";
  for (const auto& name : json::parse(r.to_json())["ordering_best_first"])
    out << ' ' << name.get<std::string>();
  out << '\n';
  return 0;
}

std::string cost_formula(Scheme s) {
  switch (s) {
    case Scheme::kDataScheduling: return "T1 + T2";
    case Scheme::kSimulation: return "(1 + N) T1";
    default: return "T1";
  }
}

json train_job_to_json(const TrainJob& job) {
  json j{{"schedule", json::parse(schedule_config_to_json(job.schedule))}};
  if (job.corpus) {
    const CorpusConfig& c = *job.corpus;
    j["corpus"] = {{"n_multi", c.n_multi},       {"n_single", c.n_single},
                   {"n_test", c.n_test},         {"vocab_size", c.vocab_size},
                   {"seed", c.seed},             {"snr_db", c.snr_db},
                   {"min_tokens", c.min_tokens}, {"max_tokens", c.max_tokens},
                   {"cover_vocabulary", c.cover_vocabulary},
                   {"sample_rate", c.sample_rate},
                   {"room", json::parse(room_config_to_json(c.room))}};
  } else {
    j["data"] = {{"multi", job.multi_manifest},
                 {"single", job.single_manifest},
                 {"test", job.test_manifest}};
  }
  if (!job.report_path.empty()) j["report"] = job.report_path;
  if (!job.checkpoint_path.empty()) j["checkpoint"] = job.checkpoint_path;
  return j;
}

int cmd_train(const TrainOptions& o, const CLI::App& app, std::ostream& out) {
  TrainJob job = o.config.empty() ? parse_train_job("{}", ".") : load_train_job(o.config);
  auto given = [&](const char* flag) { return app.get_option(flag)->count() > 0; };
  if (given("--mode")) job.schedule.mode = parse_scheme(o.mode);
  if (given("--epochs")) job.schedule.epochs = o.epochs;
  if (given("--lr")) job.schedule.learning_rate = o.lr;
  if (given("--workers")) job.schedule.workers = o.workers;
  if (given("--report")) job.report_path = o.report;
  if (given("--checkpoint")) job.checkpoint_path = o.checkpoint;
  if (given("--seed")) {
    job.schedule.seed = o.seed;
  } else if (auto s = env_seed()) {
    job.schedule.seed = *s;
  }
  job.schedule.validate();
  if (given("--compare")) return cmd_compare(job, o.compare, out);

  const TrainData data = load_train_data(job);
  Report report = run_training(job.schedule, data.multi, data.single, data.test);
  report.config_echo = train_job_to_json(job).dump();

  if (!job.report_path.empty()) write_text(job.report_path, report.to_json() + "\n");
  if (!job.checkpoint_path.empty()) save_checkpoint(job.checkpoint_path, report.final_state);

  const Scheme m = job.schedule.mode;
  out << std::left << std::setw(9) << "method" << std::setw(14) << "single-stage" << std::setw(8)
      << "aug FE" << std::setw(12) << "cost" << std::setw(14) << "predicted s" << std::setw(14)
      << "measured s" << "token error\n";
  out << std::setw(9) << to_string(m) << std::setw(14) << (single_stage(m) ? "yes" : "no")
      << std::setw(8) << (augments_front_end(m) ? "yes" : "no") << std::setw(12) << cost_formula(m)
      << std::fixed << std::setprecision(3) << std::setw(14) << report.predicted_epoch_seconds
      << std::setw(14) << report.measured_epoch_seconds << std::setprecision(4)
      << report.test_token_error << '\n';
  out << "epochs " << report.epochs.size() << ", final joint loss " << std::setprecision(4)
      << (report.epochs.empty() ? 0.0 : report.epochs.back().joint_loss) << ", N = "
      << report.ratio << '\n';
  if (m == Scheme::kDataScheduling)
    out << "ratio law " << (report.ratio_law_holds ? "holds" : "VIOLATED") << '\n';
  if (m == Scheme::kSimulation)
    out << "augmentation law " << (report.augmentation_law_holds ? "holds" : "VIOLATED") << '\n';
  if (!job.report_path.empty()) out << "report " << job.report_path << '\n';
  return 0;
}

// ---------------------------------------------------------------- gradcheck

struct GradcheckOptions {
  std::string preset = "tiny";
  std::uint64_t seed = 1;
  int count = 1;
  double epsilon = 1e-5;
  bool corrupt_adjoint = false;
  bool verbose = false;
};

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out, std::ostream& err) {
  if (o.count < 1) throw UsageError("--count must be positive");
  double worst = 0.0;
  for (int i = 0; i < o.count; ++i) {
    const std::uint64_t seed = o.seed + static_cast<std::uint64_t>(i);
    GradcheckInstance inst = gradcheck_instance(o.preset, seed);
    JointOptions jo;
    jo.corrupt_adjoint = o.corrupt_adjoint;
    const GradCheckReport r =
        finite_diff_check(std::move(inst.state), inst.utt, inst.labels, o.epsilon, jo);
    worst = std::max(worst, r.max_rel_error);
    out << "seed " << seed << " max relative error " << std::scientific << std::setprecision(3)
        << r.max_rel_error << '\n';
    if (o.verbose) out << r.format();
  }
  out << "worst " << std::scientific << std::setprecision(3) << worst << " (tolerance "
      << kGradcheckTolerance << ")\n";
  if (!(worst < kGradcheckTolerance)) {
    err << "error: gradient check failed\n";
    return static_cast<int>(ErrorKind::kNumerical);
  }
  return 0;
}

// ---------------------------------------------------------------- score

struct ScoreOptions {
  std::string hyp;
  std::string ref;
};

int cmd_score(const ScoreOptions& o, std::ostream& out) {
  const Manifest hyp = load_manifest(o.hyp);
  const Manifest ref = load_manifest(o.ref);
  std::map<std::string, const ManifestEntry*> hyp_by_id;
  for (const auto& e : hyp) hyp_by_id[e.id] = &e;
  std::set<std::string> ref_ids;
  for (const auto& e : ref) ref_ids.insert(e.id);

  std::vector<std::string> missing_hyp, missing_ref;
  for (const auto& e : ref)
    if (!hyp_by_id.contains(e.id)) missing_hyp.push_back(e.id);
  for (const auto& e : hyp)
    if (!ref_ids.contains(e.id)) missing_ref.push_back(e.id);
  if (!missing_hyp.empty() || !missing_ref.empty()) {
    std::string msg = "utterance ids do not match;";
    if (!missing_hyp.empty()) {
      msg += " missing from hypotheses:";
      for (const auto& id : missing_hyp) msg += " " + id;
      if (!missing_ref.empty()) msg += ";";
    }
    if (!missing_ref.empty()) {
      msg += " missing from references:";
      for (const auto& id : missing_ref) msg += " " + id;
    }
    throw DataError(msg);
  }

  EditCounts total;
  long long tokens = 0;
  out << std::left << std::setw(24) << "id" << "  S   I   D   N\n";
  for (const auto& r : ref) {
    const EditCounts e = edit_distance(hyp_by_id[r.id]->tokens, r.tokens);
    total.substitutions += e.substitutions;
    total.insertions += e.insertions;
    total.deletions += e.deletions;
    tokens += static_cast<long long>(r.tokens.size());
    out << std::setw(24) << r.id << std::right << std::setw(3) << e.substitutions << ' '
        << std::setw(3) << e.insertions << ' ' << std::setw(3) << e.deletions << ' '
        << std::setw(3) << r.tokens.size() << std::left << '\n';
  }
  if (tokens == 0) throw DataError("reference manifest has no tokens");
  out << "TER " << std::fixed << std::setprecision(2) << 100.0 * total.total() / tokens
      << "% (S=" << total.substitutions << " I=" << total.insertions << " D=" << total.deletions
      << " N=" << tokens << ")\n";
  return 0;
}

// ---------------------------------------------------------------- make-corpus

struct MakeCorpusOptions {
  std::string out_dir;
  std::uint64_t seed = 7;
  int n_multi = 50;
  int n_single = 100;
  int n_test = 20;
  int vocab_size = 4;
  double snr = 5.0;
  std::string room;
};

void write_set(const std::string& dir, const std::string& name, const std::vector<Utterance>& set) {
  fs::create_directories(fs::path(dir) / name);
  Manifest m;
  for (const auto& u : set) {
    ManifestEntry e;
    e.id = u.id;
    e.path = name + "/" + u.id + ".wav";
    e.channels = u.wave.num_channels();
    e.sample_rate = u.wave.sample_rate;
    e.duration = static_cast<double>(u.wave.num_samples()) / u.wave.sample_rate;
    e.tokens = u.labels;
    e.origin = u.origin;
    write_wav((fs::path(dir) / e.path).string(), u.wave, SampleFormat::kFloat32);
    m.push_back(std::move(e));
  }
  save_manifest((fs::path(dir) / (name + ".jsonl")).string(), m);
}

int cmd_make_corpus(const MakeCorpusOptions& o, std::ostream& out) {
  CorpusConfig c;
  c.seed = o.seed;
  c.n_multi = o.n_multi;
  c.n_single = o.n_single;
  c.n_test = o.n_test;
  c.vocab_size = o.vocab_size;
  c.snr_db = o.snr;
  if (c.min_tokens < c.vocab_size) {
    c.min_tokens = c.vocab_size;
    c.max_tokens = std::max(c.max_tokens, c.vocab_size + 2);
  }
  if (!o.room.empty()) c.room = load_room_config(o.room);
  const ToyCorpus corpus = generate_toy_corpus(c);
  write_set(o.out_dir, "multi", corpus.multi);
  write_set(o.out_dir, "single", corpus.single);
  write_set(o.out_dir, "test", corpus.test);
  write_vocabulary((fs::path(o.out_dir) / "vocab.txt").string(), corpus.vocabulary);
  out << "wrote " << corpus.multi.size() << " multi, " << corpus.single.size() << " single, "
      << corpus.test.size() << " test utterances to " << o.out_dir << '\n';
  return 0;
}

}  // namespace

std::optional<std::uint64_t> env_seed() {
  const char* v = std::getenv("BEAMLAB_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  const std::string s(v);
  if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 20)
    throw UsageError("BEAMLAB_SEED must be an unsigned integer, got '" + s + "'");
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw UsageError("BEAMLAB_SEED is out of range: '" + s + "'");
  }
}

GradcheckInstance gradcheck_instance(const std::string& preset, std::uint64_t seed) {
  int channels, frames, bins, n_mels, label_len;
  if (preset == "tiny") {
    channels = 2, frames = 12, bins = 9, n_mels = 4, label_len = 2;
  } else if (preset == "small") {
    channels = 4, frames = 20, bins = 17, n_mels = 6, label_len = 3;
  } else {
    throw UsageError("unknown gradcheck preset '" + preset + "' (expected tiny or small)");
  }
  const int window = 2 * (bins - 1);
  const int hop = window / 4;
  const int n = window + hop * (frames - 1);

  std::mt19937_64 rng = rng_stream(seed, 21);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // One source seen with a per-channel delay and gain, plus independent noise.
  std::vector<double> source(n + channels);
  for (double& v : source) v = gauss(rng);
  Waveform w = Waveform::zeros(channels, n, 16000);
  for (int c = 0; c < channels; ++c) {
    const double gain = 1.0 - 0.15 * c;
    for (int i = 0; i < n; ++i) w.samples[c][i] = gain * source[i + c] + 0.3 * gauss(rng);
  }

  JointModelConfig model;
  model.vocab_size = 3;
  model.features.n_mels = n_mels;
  model.features.subsample = 3;
  model.mask_hidden = 3;
  model.am_context = 1;
  model.am_hidden = 5;

  GradcheckInstance inst{TrainState::initialize(model, seed), stft(w, window, hop), {}};
  std::uniform_int_distribution<int> token(1, model.vocab_size);
  for (int i = 0; i < label_len; ++i) inst.labels.push_back(token(rng));
  return inst;
}

TrainJob parse_train_job(const std::string& json_text, const std::string& base_dir) {
  const json j = parse_config_object(json_text, "train config");
  for (const auto& [key, value] : j.items()) {
    static const std::set<std::string> kKeys = {"schedule", "corpus", "data", "report",
                                                "checkpoint"};
    if (!kKeys.contains(key)) throw UsageError("unknown config key '" + key + "'");
  }
  auto resolve = [&](const std::string& p) {
    if (p.empty() || fs::path(p).is_absolute()) return p;
    return (fs::path(base_dir) / p).lexically_normal().string();
  };
  TrainJob job;
  try {
    if (j.contains("schedule")) job.schedule = schedule_config_from_json(j["schedule"].dump());
    if (j.contains("corpus") && j.contains("data"))
      throw UsageError("train config may name either 'corpus' or 'data', not both");
    if (j.contains("data")) {
      const json& d = j["data"];
      if (!d.is_object()) throw UsageError("'data' must be an object");
      for (const auto& [key, value] : d.items())
        if (key != "multi" && key != "single" && key != "test")
          throw UsageError("unknown config key 'data." + key + "'");
      if (!d.contains("multi")) throw UsageError("'data' needs a 'multi' manifest");
      job.multi_manifest = resolve(d["multi"].get<std::string>());
      job.single_manifest = resolve(d.value("single", std::string{}));
      job.test_manifest = resolve(d.value("test", std::string{}));
    } else {
      job.corpus = j.contains("corpus") ? corpus_config_from_json(j["corpus"].dump())
                                        : CorpusConfig{};
      job.corpus->vocab_size = job.schedule.model.vocab_size;
      if (j.contains("corpus") && j["corpus"].contains("vocab_size") &&
          j["corpus"]["vocab_size"].get<int>() != job.schedule.model.vocab_size)
        throw UsageError("corpus.vocab_size differs from schedule.model.vocab_size");
    }
    job.report_path = resolve(j.value("report", std::string{}));
    job.checkpoint_path = resolve(j.value("checkpoint", std::string{}));
  } catch (const json::exception& e) {
    throw UsageError(std::string("invalid train config: ") + e.what());
  }
  return job;
}

TrainJob load_train_job(const std::string& path) {
  const std::string base = fs::path(path).parent_path().string();
  return parse_train_job(read_text(path), base.empty() ? "." : base);
}

TrainData load_train_data(const TrainJob& job) {
  TrainData d;
  if (job.corpus) {
    ToyCorpus c = generate_toy_corpus(*job.corpus);
    d.multi = std::move(c.multi);
    d.single = std::move(c.single);
    d.test = std::move(c.test);
    return d;
  }
  d.multi = load_utterances(job.multi_manifest);
  if (!job.single_manifest.empty()) d.single = load_utterances(job.single_manifest);
  if (!job.test_manifest.empty()) d.test = load_utterances(job.test_manifest);
  for (const auto* set : {&d.multi, &d.single, &d.test})
    for (const auto& u : *set)
      for (int t : u.labels)
        if (t < 1 || t > job.schedule.model.vocab_size)
          throw DataError("utterance '" + u.id + "' has token " + std::to_string(t) +
                          " outside the vocabulary");
  return d;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mask-based MVDR beamforming jointly trained with a CTC back-end", "beamlab"};
  app.require_subcommand(1);

  EnhanceOptions enhance;
  CLI::App* enhance_cmd = app.add_subcommand("enhance", "Beamform a multi-channel WAV file");
  FileBackedOptions enhance_opts(enhance_cmd);
  enhance_opts.option("--input,-i", enhance.input, "Multi-channel input WAV");
  enhance_opts.option("--output,-o", enhance.output, "Enhanced mono output WAV");
  enhance_opts.option("--masks", enhance.masks, "oracle | checkpoint");
  enhance_opts.option("--checkpoint", enhance.checkpoint, "Trained model (checkpoint masks)");
  enhance_opts.option("--clean", enhance.clean,
                      "Clean speech image; required for oracle masks, enables SNR reporting");
  enhance_opts.option("--ref", enhance.ref, "Force the reference microphone");
  enhance_opts.flag("--one-hot", enhance.one_hot, "Debug: replace h by the reference one-hot");
  enhance_opts.option("--window", enhance.window, "STFT window length");
  enhance_opts.option("--hop", enhance.hop, "STFT hop");

  SimulateOptions simulate;
  CLI::App* simulate_cmd =
      app.add_subcommand("simulate", "Render single-channel utterances through a simulated room");
  FileBackedOptions simulate_opts(simulate_cmd);
  simulate_opts.option("--manifest", simulate.manifest, "Manifest of single-channel utterances");
  simulate_opts.option("--room", simulate.room, "Room JSON (default: built-in room and array)");
  simulate_opts.option("--out-dir", simulate.out_dir, "Output directory");
  simulate_opts.option("--snr", simulate.snr, "Added white-noise SNR in dB (default: none)");
  simulate_opts.option("--seed", simulate.seed, "Noise seed");

  TrainOptions train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train with PT, DS, SIMU or JO_ONLY");
  train_cmd->add_option("--config", train.config, "Train config JSON");
  train_cmd->add_option("--mode", train.mode, "PT | DS | SIMU | JO_ONLY");
  train_cmd->add_option("--epochs", train.epochs, "Joint-training epochs");
  train_cmd->add_option("--seed", train.seed, "Training seed");
  train_cmd->add_option("--lr", train.lr, "Learning rate");
  train_cmd->add_option("--workers", train.workers, "Worker threads (1 = sequential)");
  train_cmd->add_option("--report", train.report, "Write the Report JSON here");
  train_cmd->add_option("--checkpoint", train.checkpoint, "Write the final checkpoint here");
  train_cmd->add_option("--compare", train.compare,
                        "Comma-separated seeds: train every scheme per seed and report the means");

  GradcheckOptions gradcheck;
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "Compare the reverse pass with finite differences");
  FileBackedOptions gradcheck_opts(gradcheck_cmd);
  gradcheck_opts.option("--preset", gradcheck.preset, "tiny | small");
  gradcheck_opts.option("--seed", gradcheck.seed, "First instance seed");
  gradcheck_opts.option("--count", gradcheck.count, "Number of consecutive seeds");
  gradcheck_opts.option("--epsilon", gradcheck.epsilon, "Central-difference step");
  gradcheck_opts.flag("--corrupt-adjoint", gradcheck.corrupt_adjoint,
                      "Test hook: perturb the PSD adjoint");
  gradcheck_opts.flag("--verbose", gradcheck.verbose, "Per-parameter breakdown");

  ScoreOptions score;
  CLI::App* score_cmd = app.add_subcommand("score", "Token error rate of hypotheses");
  FileBackedOptions score_opts(score_cmd);
  score_opts.option("--hyp", score.hyp, "Hypothesis manifest");
  score_opts.option("--ref", score.ref, "Reference manifest");

  MakeCorpusOptions corpus;
  CLI::App* corpus_cmd = app.add_subcommand("make-corpus", "Write the synthetic toy corpus");
  FileBackedOptions corpus_opts(corpus_cmd);
  corpus_opts.option("--out-dir", corpus.out_dir, "Output directory");
  corpus_opts.option("--seed", corpus.seed, "Corpus seed");
  corpus_opts.option("--n-multi", corpus.n_multi, "Multi-channel training utterances");
  corpus_opts.option("--n-single", corpus.n_single, "Single-channel utterances");
  corpus_opts.option("--n-test", corpus.n_test, "Multi-channel test utterances");
  corpus_opts.option("--vocab-size", corpus.vocab_size, "Number of tokens");
  corpus_opts.option("--snr", corpus.snr, "Noise SNR in dB");
  corpus_opts.option("--room", corpus.room, "Room JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::kUsage);
  }

  auto require = [](const std::string& value, const char* flag) {
    if (value.empty()) throw UsageError(std::string(flag) + " is required");
  };

  try {
    if (enhance_cmd->parsed()) {
      enhance_opts.apply();
      require(enhance.input, "--input");
      require(enhance.output, "--output");
      return cmd_enhance(enhance, out);
    }
    if (simulate_cmd->parsed()) {
      simulate_opts.apply();
      simulate.seed = resolve_seed(simulate_opts, simulate.seed);
      require(simulate.manifest, "--manifest");
      require(simulate.out_dir, "--out-dir");
      return cmd_simulate(simulate, out);
    }
    if (train_cmd->parsed()) return cmd_train(train, *train_cmd, out);
    if (gradcheck_cmd->parsed()) {
      gradcheck_opts.apply();
      gradcheck.seed = resolve_seed(gradcheck_opts, gradcheck.seed);
      return cmd_gradcheck(gradcheck, out, err);
    }
    if (score_cmd->parsed()) {
      score_opts.apply();
      require(score.hyp, "--hyp");
      require(score.ref, "--ref");
      return cmd_score(score, out);
    }
    if (corpus_cmd->parsed()) {
      corpus_opts.apply();
      corpus.seed = resolve_seed(corpus_opts, corpus.seed);
      require(corpus.out_dir, "--out-dir");
      return cmd_make_corpus(corpus, out);
    }
  } catch (const Error& e) {
    return report_error(err, e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::kData);
  }
  return static_cast<int>(ErrorKind::kUsage);
}

}  // namespace beamlab::cli
