#include "beamlab/pipeline.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "beamlab/error.h"

namespace beamlab {

MaskNetParams MaskNetParams::zeros(int hidden) {
  if (hidden <= 0) throw DataError("mask net needs a positive hidden width");
  MaskNetParams p;
  p.hidden = hidden;
  p.w1 = RowMatrix::Zero(hidden, kInputs);
  p.b1 = Eigen::VectorXd::Zero(hidden);
  p.w2 = Eigen::VectorXd::Zero(hidden);
  p.b2 = Eigen::VectorXd::Zero(1);
  return p;
}

MaskNetParams MaskNetParams::random(int hidden, std::mt19937_64& rng) {
  MaskNetParams p = zeros(hidden);
  const double r1 = std::sqrt(6.0 / (kInputs + hidden));
  const double r2 = std::sqrt(6.0 / (hidden + 1));
  std::uniform_real_distribution<double> u1(-r1, r1), u2(-r2, r2);
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = u1(rng);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = u2(rng);
  return p;
}

std::vector<ParamView> MaskNetParams::views() {
  return {{"mask.w1", {w1.data(), static_cast<std::size_t>(w1.size())}},
          {"mask.b1", {b1.data(), static_cast<std::size_t>(b1.size())}},
          {"mask.w2", {w2.data(), static_cast<std::size_t>(w2.size())}},
          {"mask.b2", {b2.data(), static_cast<std::size_t>(b2.size())}}};
}

std::vector<ConstParamView> MaskNetParams::views() const {
  return {{"mask.w1", {w1.data(), static_cast<std::size_t>(w1.size())}},
          {"mask.b1", {b1.data(), static_cast<std::size_t>(b1.size())}},
          {"mask.w2", {w2.data(), static_cast<std::size_t>(w2.size())}},
          {"mask.b2", {b2.data(), static_cast<std::size_t>(b2.size())}}};
}

namespace {

template <typename View, typename A, typename B>
std::vector<View> concat_views(A& mask, B& am) {
  std::vector<View> v = mask.views();
  for (auto& x : am.views()) v.push_back(x);
  return v;
}

}  // namespace

TrainState TrainState::initialize(const JointModelConfig& model, std::uint64_t seed) {
  if (model.vocab_size < 1) throw DataError("vocabulary must hold at least one token");
  TrainState s;
  s.model = model;
  s.seed = seed;
  std::mt19937_64 rng(seed);
  s.mask = MaskNetParams::random(model.mask_hidden, rng);
  s.am = AmParams::random(model.am_input_dims(), model.am_context, model.am_hidden,
                          model.vocab_size + 1, rng);
  return s;
}

std::vector<ParamView> TrainState::views() { return concat_views<ParamView>(mask, am); }
std::vector<ConstParamView> TrainState::views() const {
  return concat_views<ConstParamView>(mask, am);
}

std::size_t TrainState::num_parameters() const {
  std::size_t n = 0;
  for (const auto& v : views()) n += v.values.size();
  return n;
}

GradBundle GradBundle::zeros_like(const TrainState& state) {
  return {MaskNetParams::zeros(state.mask.hidden),
          AmParams::zeros(state.am.input_dims, state.am.context, state.am.hidden,
                          state.am.symbols)};
}

std::vector<ParamView> GradBundle::views() { return concat_views<ParamView>(mask, am); }
std::vector<ConstParamView> GradBundle::views() const {
  return concat_views<ConstParamView>(mask, am);
}

void GradBundle::add(const GradBundle& other, double scale) {
  auto dst = views();
  const auto src = other.views();
  for (std::size_t i = 0; i < dst.size(); ++i)
    for (std::size_t k = 0; k < dst[i].values.size(); ++k)
      dst[i].values[k] += scale * src[i].values[k];
}

bool GradBundle::all_finite() const {
  for (const auto& v : views())
    for (double x : v.values)
      if (!std::isfinite(x)) return false;
  return true;
}

struct JointCache {
  const TrainState* state = nullptr;
  const Spectrogram* utt = nullptr;
  JointOptions opts;
  FrontEndOutput front;
  RowMatrix mask_inputs;
  RowMatrix mask_hidden;
  std::unique_ptr<MelFilterbank> bank;
  CmvnResult cmvn;
  int delta_frames = 0;
  FeatureMatrix features;
  AmCache am;
  CtcResult ctc;
};

int observation_reference(const Spectrogram& utt) {
  std::vector<double> power(utt.channels, 0.0);
  for (int t = 0; t < utt.frames; ++t)
    for (int f = 0; f < utt.bins; ++f)
      for (int c = 0; c < utt.channels; ++c) power[c] += std::norm(utt.at(t, f, c));
  int best = 0;
  for (int c = 1; c < utt.channels; ++c)
    if (power[c] > power[best]) best = c;
  return best;
}

RowMatrix mask_net_inputs(const Spectrogram& utt, int ref) {
  const int T = utt.frames, F = utt.bins;
  std::vector<double> logp(static_cast<std::size_t>(T) * F);
  double mean = 0.0;
  for (int t = 0; t < T; ++t)
    for (int f = 0; f < F; ++f) {
      const double v = std::log(std::norm(utt.at(t, f, ref)) + kLogFloor);
      logp[static_cast<std::size_t>(t) * F + f] = v;
      mean += v;
    }
  mean /= static_cast<double>(logp.size());
  double var = 0.0;
  for (double v : logp) var += (v - mean) * (v - mean);
  var = std::max(var / static_cast<double>(logp.size()), kVarianceFloor);
  const double sd = std::sqrt(var);
  for (double& v : logp) v = (v - mean) / sd;

  RowMatrix z(static_cast<Eigen::Index>(T) * F, MaskNetParams::kInputs);
  for (int t = 0; t < T; ++t) {
    for (int f = 0; f < F; ++f) {
      const std::size_t row = static_cast<std::size_t>(t) * F;
      for (int k = -1; k <= 1; ++k) {
        const int src = std::clamp(f + k, 0, F - 1);
        z(row + f, k + 1) = logp[row + src];
      }
    }
  }
  return z;
}

TFMask mask_net_forward(const MaskNetParams& params, const RowMatrix& inputs, int frames,
                        int bins, RowMatrix* hidden) {
  RowMatrix h = (inputs * params.w1.transpose()).rowwise() + params.b1.transpose();
  h = h.array().tanh();
  const Eigen::VectorXd logits = (h * params.w2).array() + params.b2(0);
  TFMask m = TFMask::filled(frames, bins, 0.0, MaskTarget::kSpeech);
  for (Eigen::Index i = 0; i < logits.size(); ++i) m.values[i] = 1.0 / (1.0 + std::exp(-logits(i)));
  if (hidden != nullptr) *hidden = std::move(h);
  return m;
}

namespace {

FrontEndOutput run_frontend(const TrainState& state, const Spectrogram& utt,
                            const JointOptions& opts, RowMatrix* inputs, RowMatrix* hidden) {
  if (utt.channels < 1) throw DataError("utterance has no channels");
  FrontEndOutput out;
  out.ref_channel = opts.ref_channel ? *opts.ref_channel : observation_reference(utt);
  if (out.ref_channel < 0 || out.ref_channel >= utt.channels)
    throw DataError("reference channel out of range");

  if (opts.fixed_speech_mask) {
    out.speech_mask = *opts.fixed_speech_mask;
    if (out.speech_mask.frames != utt.frames || out.speech_mask.bins != utt.bins)
      throw DataError("fixed mask shape does not match utterance");
  } else {
    RowMatrix z = mask_net_inputs(utt, out.ref_channel);
    out.speech_mask = mask_net_forward(state.mask, z, utt.frames, utt.bins, hidden);
    if (inputs != nullptr) *inputs = std::move(z);
  }
  out.psd.phi_ss = estimate_psd(utt, out.speech_mask);
  out.psd.phi_nn = estimate_psd(utt, out.speech_mask.complement());
  out.weights = mvdr_weights(out.psd, out.ref_channel, state.model.mvdr);
  out.enhanced = apply_beamformer(out.weights, utt);
  return out;
}

}  // namespace

FrontEndOutput frontend_forward(const TrainState& state, const Spectrogram& utt,
                                const JointOptions& opts) {
  return run_frontend(state, utt, opts, nullptr, nullptr);
}

JointForward forward_joint(const TrainState& state, const Spectrogram& utt,
                           const LabelSequence& labels, const JointOptions& opts) {
  auto cache = std::make_shared<JointCache>();
  cache->state = &state;
  cache->utt = &utt;
  cache->opts = opts;
  cache->front = run_frontend(state, utt, opts, &cache->mask_inputs, &cache->mask_hidden);

  const FeatureConfig& fc = state.model.features;
  cache->bank = std::make_unique<MelFilterbank>(fc.n_mels, utt.window_size, utt.sample_rate);
  cache->cmvn = cmvn_detailed(log_fbank(cache->front.enhanced, *cache->bank));
  const FeatureMatrix deltas = add_deltas(cache->cmvn.normalized);
  cache->delta_frames = deltas.frames;
  cache->features = subsample(deltas, fc.subsample);

  JointForward out;
  out.lattice = am_forward(cache->features, state.am, &cache->am);
  cache->ctc = ctc_loss(out.lattice, labels);
  out.loss = cache->ctc.loss;
  if (!std::isfinite(out.loss)) throw NumericalError("joint loss is not finite");
  out.ref_channel = cache->front.ref_channel;
  out.cache = std::move(cache);
  return out;
}

GradBundle backward_joint(const JointForward& fwd, double upstream) {
  if (!fwd.cache) throw DataError("backward_joint called without a forward cache");
  const JointCache& c = *fwd.cache;
  const TrainState& state = *c.state;
  const Spectrogram& utt = *c.utt;
  GradBundle g = GradBundle::zeros_like(state);

  LogProbLattice g_lat = c.ctc.grad;
  for (double& v : g_lat.values) v *= upstream;

  AmBackward am = am_backward(state.am, c.am, g_lat, c.features.frames);
  g.am = std::move(am.grad);

  const FeatureMatrix g_deltas =
      subsample_backward(am.grad_feat, c.delta_frames, state.model.features.subsample);
  const FeatureMatrix g_norm = add_deltas_backward(g_deltas);
  const FeatureMatrix g_fbank = cmvn_backward(c.cmvn, g_norm);
  const std::vector<cdouble> g_enh = log_fbank_backward(c.front.enhanced, *c.bank, g_fbank);

  if (c.opts.fixed_speech_mask) return g;  // nothing upstream of the masks is trainable

  const std::vector<CVector> g_h = apply_beamformer_backward(utt, g_enh);
  PsdGrad g_psd = mvdr_weights_backward(c.front.psd, c.front.ref_channel, g_h,
                                        state.model.mvdr);
  if (c.opts.corrupt_adjoint)
    for (auto& m : g_psd.phi_ss) m *= 1.5;

  const TFMask& speech = c.front.speech_mask;
  const std::vector<double> g_ms =
      estimate_psd_backward(utt, speech, c.front.psd.phi_ss, g_psd.phi_ss);
  const std::vector<double> g_mn =
      estimate_psd_backward(utt, speech.complement(), c.front.psd.phi_nn, g_psd.phi_nn);

  // m = sigmoid(o)
  const Eigen::Index n = static_cast<Eigen::Index>(speech.values.size());
  Eigen::VectorXd g_logit(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double m = speech.values[i];
    g_logit(i) = (g_ms[i] - g_mn[i]) * m * (1.0 - m);
  }
  const RowMatrix& h = c.mask_hidden;
  g.mask.w2 = h.transpose() * g_logit;
  g.mask.b2(0) = g_logit.sum();
  RowMatrix g_z = (g_logit * state.mask.w2.transpose()).array() * (1.0 - h.array().square());
  g.mask.w1 = g_z.transpose() * c.mask_inputs;
  g.mask.b1 = g_z.colwise().sum().transpose();
  return g;
}

LabelSequence decode_joint(const TrainState& state, const Spectrogram& utt) {
  const FrontEndOutput front = frontend_forward(state, utt);
  const FeatureMatrix feat = extract_features(front.enhanced, state.model.features);
  return greedy_decode(am_forward(feat, state.am));
}

BackendStep backend_loss_and_grad(const AmParams& am, const FeatureMatrix& features,
                                  const LabelSequence& labels) {
  AmCache cache;
  const LogProbLattice lattice = am_forward(features, am, &cache);
  const CtcResult ctc = ctc_loss(lattice, labels);
  if (!std::isfinite(ctc.loss)) throw NumericalError("back-end loss is not finite");
  AmBackward back = am_backward(am, cache, ctc.grad, features.frames);
  return {ctc.loss, std::move(back.grad)};
}

std::string GradCheckReport::format() const {
  std::ostringstream os;
  os << std::scientific << std::setprecision(3);
  for (const auto& g : groups) {
    os << "  " << std::left << std::setw(10) << g.name << " n=" << std::setw(6) << g.count
       << " max_rel=" << g.max_rel_error << " max_abs=" << g.max_abs_error << '\n';
  }
  os << "  overall max_rel=" << max_rel_error << '\n';
  return os.str();
}

GradCheckReport finite_diff_check(const std::function<double()>& loss,
                                  std::span<const ParamView> params,
                                  std::span<const ConstParamView> analytic, double epsilon) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw DataError("invalid epsilon");
  if (params.size() != analytic.size()) throw DataError("gradient layout mismatch");
  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].values.size() != analytic[i].values.size())
      throw DataError("gradient layout mismatch in " + params[i].name);
    GradCheckGroup group{params[i].name, params[i].values.size(), 0.0, 0.0};
    for (std::size_t k = 0; k < params[i].values.size(); ++k) {
      double& p = params[i].values[k];
      const double saved = p;
      p = saved + epsilon;
      const double up = loss();
      p = saved - epsilon;
      const double down = loss();
      p = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericalError("non-finite loss during finite differences");
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = analytic[i].values[k];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      group.max_abs_error = std::max(group.max_abs_error, abs_err);
      group.max_rel_error = std::max(group.max_rel_error, rel);
    }
    report.max_rel_error = std::max(report.max_rel_error, group.max_rel_error);
    report.groups.push_back(group);
  }
  return report;
}

GradCheckReport finite_diff_check(TrainState state, const Spectrogram& utt,
                                  const LabelSequence& labels, double epsilon,
                                  const JointOptions& opts) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw DataError("invalid epsilon");
  const JointForward fwd = forward_joint(state, utt, labels, opts);
  const GradBundle analytic = backward_joint(fwd);
  JointOptions frozen = opts;
  frozen.ref_channel = fwd.ref_channel;
  frozen.corrupt_adjoint = false;
  auto loss = [&] { return forward_joint(state, utt, labels, frozen).loss; };
  const std::vector<ParamView> params = state.views();
  const std::vector<ConstParamView> grads = analytic.views();
  return finite_diff_check(loss, params, grads, epsilon);
}

namespace {

using nlohmann::json;

json model_to_json(const JointModelConfig& m) {
  return json{{"vocab_size", m.vocab_size},
              {"n_mels", m.features.n_mels},
              {"subsample", m.features.subsample},
              {"mvdr_loading", m.mvdr.loading},
              {"mvdr_min_noise_power", m.mvdr.min_noise_power},
              {"mask_hidden", m.mask_hidden},
              {"am_context", m.am_context},
              {"am_hidden", m.am_hidden}};
}

JointModelConfig model_from_json(const json& j) {
  JointModelConfig m;
  m.vocab_size = j.at("vocab_size").get<int>();
  m.features.n_mels = j.at("n_mels").get<int>();
  m.features.subsample = j.at("subsample").get<int>();
  m.mvdr.loading = j.at("mvdr_loading").get<double>();
  m.mvdr.min_noise_power = j.at("mvdr_min_noise_power").get<double>();
  m.mask_hidden = j.at("mask_hidden").get<int>();
  m.am_context = j.at("am_context").get<int>();
  m.am_hidden = j.at("am_hidden").get<int>();
  return m;
}

}  // namespace

std::string checkpoint_to_json(const TrainState& state) {
  json params = json::object();
  for (const auto& v : state.views())
    params[v.name] = std::vector<double>(v.values.begin(), v.values.end());
  json j{{"format", "beamlab-checkpoint"},
         {"version", kCheckpointVersion},
         {"model", model_to_json(state.model)},
         {"step", state.step},
         {"seed", state.seed},
         {"optimizer", {{"type", "sgd"}, {"moments", state.optimizer_moments}}},
         {"params", params}};
  return j.dump();
}

TrainState checkpoint_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format") != "beamlab-checkpoint") throw DataError("not a beamlab checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw DataError("unsupported checkpoint version");
    TrainState s;
    s.model = model_from_json(j.at("model"));
    s.step = j.at("step").get<std::int64_t>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.optimizer_moments = j.at("optimizer").at("moments").get<std::vector<std::vector<double>>>();
    s.mask = MaskNetParams::zeros(s.model.mask_hidden);
    s.am = AmParams::zeros(s.model.am_input_dims(), s.model.am_context, s.model.am_hidden,
                           s.model.vocab_size + 1);
    const json& params = j.at("params");
    for (auto& v : s.views()) {
      const auto values = params.at(v.name).get<std::vector<double>>();
      if (values.size() != v.values.size())
        throw DataError("checkpoint tensor " + v.name + " has the wrong size");
      std::copy(values.begin(), values.end(), v.values.begin());
    }
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::string& path, const TrainState& state) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out << checkpoint_to_json(state);
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

TrainState load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace beamlab
