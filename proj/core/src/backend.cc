#include "beamlab/backend.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "beamlab/error.h"

namespace beamlab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  if (a < b) std::swap(a, b);
  return a + std::log1p(std::exp(b - a));
}

}  // namespace

LogProbLattice LogProbLattice::zeros(int frames, int symbols) {
  LogProbLattice l;
  l.frames = frames;
  l.symbols = symbols;
  l.values.assign(static_cast<std::size_t>(frames) * symbols, 0.0);
  return l;
}

AmParams AmParams::zeros(int input_dims, int context, int hidden, int symbols) {
  if (input_dims <= 0 || context < 0 || hidden <= 0 || symbols < 2)
    throw DataError("invalid acoustic model shape");
  AmParams p;
  p.input_dims = input_dims;
  p.context = context;
  p.hidden = hidden;
  p.symbols = symbols;
  p.w1 = RowMatrix::Zero(hidden, p.window_dims());
  p.b1 = Eigen::VectorXd::Zero(hidden);
  p.w2 = RowMatrix::Zero(symbols, hidden);
  p.b2 = Eigen::VectorXd::Zero(symbols);
  return p;
}

AmParams AmParams::random(int input_dims, int context, int hidden, int symbols,
                          std::mt19937_64& rng) {
  AmParams p = zeros(input_dims, context, hidden, symbols);
  // Glorot-uniform weights, zero biases.
  const double r1 = std::sqrt(6.0 / (p.window_dims() + hidden));
  const double r2 = std::sqrt(6.0 / (hidden + symbols));
  std::uniform_real_distribution<double> u1(-r1, r1), u2(-r2, r2);
  for (Eigen::Index i = 0; i < p.w1.size(); ++i) p.w1.data()[i] = u1(rng);
  for (Eigen::Index i = 0; i < p.w2.size(); ++i) p.w2.data()[i] = u2(rng);
  return p;
}

std::vector<ParamView> AmParams::views() {
  return {{"am.w1", {w1.data(), static_cast<std::size_t>(w1.size())}},
          {"am.b1", {b1.data(), static_cast<std::size_t>(b1.size())}},
          {"am.w2", {w2.data(), static_cast<std::size_t>(w2.size())}},
          {"am.b2", {b2.data(), static_cast<std::size_t>(b2.size())}}};
}

std::vector<ConstParamView> AmParams::views() const {
  return {{"am.w1", {w1.data(), static_cast<std::size_t>(w1.size())}},
          {"am.b1", {b1.data(), static_cast<std::size_t>(b1.size())}},
          {"am.w2", {w2.data(), static_cast<std::size_t>(w2.size())}},
          {"am.b2", {b2.data(), static_cast<std::size_t>(b2.size())}}};
}

LogProbLattice am_forward(const FeatureMatrix& feat, const AmParams& params, AmCache* cache) {
  if (feat.dims != params.input_dims)
    throw DataError("acoustic model input dims " + std::to_string(params.input_dims) +
                    " do not match features with " + std::to_string(feat.dims) + " dims");
  const int T = feat.frames;
  const int D = feat.dims;
  RowMatrix x(T, params.window_dims());
  for (int t = 0; t < T; ++t) {
    for (int k = -params.context; k <= params.context; ++k) {
      const int src = std::clamp(t + k, 0, T - 1);
      const int off = (k + params.context) * D;
      for (int d = 0; d < D; ++d) x(t, off + d) = feat.at(src, d);
    }
  }
  RowMatrix h = (x * params.w1.transpose()).rowwise() + params.b1.transpose();
  h = h.array().tanh();
  RowMatrix o = (h * params.w2.transpose()).rowwise() + params.b2.transpose();

  LogProbLattice out = LogProbLattice::zeros(T, params.symbols);
  RowMatrix soft(T, params.symbols);
  for (int t = 0; t < T; ++t) {
    const double mx = o.row(t).maxCoeff();
    const double lse = mx + std::log((o.row(t).array() - mx).exp().sum());
    for (int k = 0; k < params.symbols; ++k) {
      out.at(t, k) = o(t, k) - lse;
      soft(t, k) = std::exp(out.at(t, k));
    }
  }
  if (cache != nullptr) {
    cache->inputs = std::move(x);
    cache->hidden = std::move(h);
    cache->softmax = std::move(soft);
  }
  return out;
}

AmBackward am_backward(const AmParams& params, const AmCache& cache,
                       const LogProbLattice& grad_lattice, int feature_frames) {
  const int T = grad_lattice.frames;
  const int D = params.input_dims;
  Eigen::Map<const RowMatrix> g_lat(grad_lattice.values.data(), T, params.symbols);

  // log-softmax adjoint: g_o = g - softmax * rowsum(g)
  RowMatrix g_o = g_lat;
  const Eigen::VectorXd row_sums = g_lat.rowwise().sum();
  g_o -= (cache.softmax.array().colwise() * row_sums.array()).matrix();

  AmBackward out{AmParams::zeros(D, params.context, params.hidden, params.symbols),
                 FeatureMatrix::zeros(feature_frames, D, FeatureStage::kSubsampled)};
  out.grad.w2 = g_o.transpose() * cache.hidden;
  out.grad.b2 = g_o.colwise().sum().transpose();
  RowMatrix g_h = g_o * params.w2;
  RowMatrix g_z = (g_h.array() * (1.0 - cache.hidden.array().square())).matrix();
  out.grad.w1 = g_z.transpose() * cache.inputs;
  out.grad.b1 = g_z.colwise().sum().transpose();
  RowMatrix g_x = g_z * params.w1;
  for (int t = 0; t < T; ++t) {
    for (int k = -params.context; k <= params.context; ++k) {
      const int src = std::clamp(t + k, 0, T - 1);
      const int off = (k + params.context) * D;
      for (int d = 0; d < D; ++d) out.grad_feat.at(src, d) += g_x(t, off + d);
    }
  }
  return out;
}

int ctc_min_frames(const LabelSequence& labels) {
  int n = static_cast<int>(labels.size());
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++n;
  return n;
}

CtcResult ctc_loss(const LogProbLattice& lattice, const LabelSequence& labels) {
  for (int id : labels)
    if (id <= kBlank || id >= lattice.symbols)
      throw DataError("label id " + std::to_string(id) + " outside vocabulary");
  const int T = lattice.frames;
  if (T < ctc_min_frames(labels) || (T == 0 && !labels.empty()))
    throw DataError("no valid alignment");

  CtcResult r;
  r.grad = LogProbLattice::zeros(T, lattice.symbols);
  if (T == 0) return r;

  const int L = static_cast<int>(labels.size());
  const int S = 2 * L + 1;
  std::vector<int> ext(S, kBlank);
  for (int i = 0; i < L; ++i) ext[2 * i + 1] = labels[i];
  auto can_skip = [&](int s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(static_cast<std::size_t>(T) * S, kNegInf);
  std::vector<double> beta(static_cast<std::size_t>(T) * S, kNegInf);
  auto A = [&](int t, int s) -> double& { return alpha[static_cast<std::size_t>(t) * S + s]; };
  auto B = [&](int t, int s) -> double& { return beta[static_cast<std::size_t>(t) * S + s]; };

  A(0, 0) = lattice.at(0, ext[0]);
  if (S > 1) A(0, 1) = lattice.at(0, ext[1]);
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double v = A(t - 1, s);
      if (s >= 1) v = log_add(v, A(t - 1, s - 1));
      if (can_skip(s)) v = log_add(v, A(t - 1, s - 2));
      if (v != kNegInf) A(t, s) = v + lattice.at(t, ext[s]);
    }
  }
  double log_p = A(T - 1, S - 1);
  if (S > 1) log_p = log_add(log_p, A(T - 1, S - 2));
  if (log_p == kNegInf) throw DataError("no valid alignment");

  // beta excludes the emission at frame t.
  B(T - 1, S - 1) = 0.0;
  if (S > 1) B(T - 1, S - 2) = 0.0;
  for (int t = T - 2; t >= 0; --t) {
    for (int s = 0; s < S; ++s) {
      double v = B(t + 1, s) + lattice.at(t + 1, ext[s]);
      if (s + 1 < S) v = log_add(v, B(t + 1, s + 1) + lattice.at(t + 1, ext[s + 1]));
      if (s + 2 < S && can_skip(s + 2))
        v = log_add(v, B(t + 1, s + 2) + lattice.at(t + 1, ext[s + 2]));
      B(t, s) = v;
    }
  }

  r.loss = -log_p;
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      const double lg = A(t, s) + B(t, s);
      if (lg == kNegInf) continue;
      r.grad.at(t, ext[s]) -= std::exp(lg - log_p);
    }
  }
  return r;
}

LabelSequence collapse_path(std::span<const int> path) {
  LabelSequence out;
  int prev = -1;
  for (int k : path) {
    if (k != prev && k != kBlank) out.push_back(k);
    prev = k;
  }
  return out;
}

LabelSequence greedy_decode(const LogProbLattice& lattice) {
  std::vector<int> path(lattice.frames);
  for (int t = 0; t < lattice.frames; ++t) {
    int best = 0;
    for (int k = 1; k < lattice.symbols; ++k)
      if (lattice.at(t, k) > lattice.at(t, best)) best = k;
    path[t] = best;
  }
  return collapse_path(path);
}

EditCounts edit_distance(const LabelSequence& hyp, const LabelSequence& ref) {
  const int H = static_cast<int>(hyp.size());
  const int R = static_cast<int>(ref.size());
  std::vector<int> d(static_cast<std::size_t>(H + 1) * (R + 1));
  auto D = [&](int i, int j) -> int& { return d[static_cast<std::size_t>(i) * (R + 1) + j]; };
  for (int i = 0; i <= H; ++i) D(i, 0) = i;
  for (int j = 0; j <= R; ++j) D(0, j) = j;
  for (int i = 1; i <= H; ++i) {
    for (int j = 1; j <= R; ++j) {
      const int diag = D(i - 1, j - 1) + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      D(i, j) = std::min({diag, D(i - 1, j) + 1, D(i, j - 1) + 1});
    }
  }
  EditCounts counts;
  int i = H, j = R;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = hyp[i - 1] == ref[j - 1];
      if (D(i, j) == D(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++counts.substitutions;
        --i;
        --j;
        continue;
      }
    }
    if (j > 0 && D(i, j) == D(i, j - 1) + 1) {
      ++counts.deletions;
      --j;
    } else {
      ++counts.insertions;
      --i;
    }
  }
  return counts;
}

std::vector<std::string> read_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw DataError("empty token on vocabulary line " +
                                      std::to_string(tokens.size() + 1));
    tokens.push_back(line);
  }
  return tokens;
}

void write_vocabulary(const std::string& path, const std::vector<std::string>& tokens) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary: " + path);
  for (const auto& t : tokens) out << t << '\n';
}

}  // namespace beamlab
