#include "beamlab/roomsim.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <json.hpp>
#include <unsupported/Eigen/FFT>

#include "beamlab/error.h"

namespace beamlab {

namespace {

bool inside(const Point3& p, const Point3& dims) {
  for (int i = 0; i < 3; ++i)
    if (!(p[i] > 0.0 && p[i] < dims[i])) return false;
  return true;
}

double distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

void RoomSpec::validate() const {
  for (double d : dims)
    if (!(d > 0.0)) throw DataError("room dimensions must be positive");
  for (double a : absorption)
    if (!(a > 0.0 && a <= 1.0)) throw DataError("wall absorption must lie in (0, 1]");
  if (!(sound_speed > 0.0)) throw DataError("sound speed must be positive");
  if (!inside(source, dims)) throw DataError("source lies outside the room");
}

MicArray chime4_array(const Point3& center) {
  MicArray a;
  a.preset = "chime4-6ch";
  constexpr double kSpacing = 0.10;
  for (int row = 0; row < 2; ++row) {
    for (int col = 0; col < 3; ++col) {
      a.positions.push_back({center[0] + (col - 1) * kSpacing,
                             center[1] + (row - 0.5) * kSpacing, center[2]});
    }
  }
  return a;
}

MicArray aishell4_array(const Point3& center) {
  MicArray a;
  a.preset = "aishell4-8ch-circular";
  constexpr double kRadius = 0.05;
  for (int i = 0; i < 8; ++i) {
    const double phi = 2.0 * std::numbers::pi * i / 8;
    a.positions.push_back(
        {center[0] + kRadius * std::cos(phi), center[1] + kRadius * std::sin(phi), center[2]});
  }
  return a;
}

MicArray preset_array(const std::string& name, const Point3& center) {
  if (name == "chime4-6ch") return chime4_array(center);
  if (name == "aishell4-8ch-circular") return aishell4_array(center);
  throw UsageError("unknown microphone array preset: " + name);
}

std::vector<ImageSource> enumerate_images(const RoomSpec& room, int max_order) {
  if (max_order < 0) throw DataError("max_order must be non-negative");
  room.validate();
  std::array<double, 6> beta{};
  for (int w = 0; w < 6; ++w) beta[w] = std::sqrt(1.0 - room.absorption[w]);

  std::vector<ImageSource> images;
  const int n_max = (max_order + 1) / 2;
  for (int nx = -n_max; nx <= n_max; ++nx)
  for (int ny = -n_max; ny <= n_max; ++ny)
  for (int nz = -n_max; nz <= n_max; ++nz)
  for (int px = 0; px <= 1; ++px)
  for (int py = 0; py <= 1; ++py)
  for (int pz = 0; pz <= 1; ++pz) {
    const std::array<int, 3> n{nx, ny, nz};
    const std::array<int, 3> p{px, py, pz};
    int order = 0;
    double gain = 1.0;
    ImageSource img;
    for (int axis = 0; axis < 3; ++axis) {
      // |n - p| hits on the wall at 0, |n| hits on the wall at L.
      const int low_hits = std::abs(n[axis] - p[axis]);
      const int high_hits = std::abs(n[axis]);
      order += low_hits + high_hits;
      gain *= std::pow(beta[2 * axis], low_hits) * std::pow(beta[2 * axis + 1], high_hits);
      img.position[axis] = (1 - 2 * p[axis]) * room.source[axis] + 2.0 * n[axis] * room.dims[axis];
    }
    if (order > max_order) continue;
    img.order = order;
    img.reflection_gain = gain;
    images.push_back(img);
  }
  std::stable_sort(images.begin(), images.end(),
                   [](const ImageSource& a, const ImageSource& b) { return a.order < b.order; });
  return images;
}

Rir image_source_rir(const RoomSpec& room, const MicArray& array, const RirOptions& opts) {
  room.validate();
  if (array.positions.empty()) throw DataError("microphone array is empty");
  for (const auto& m : array.positions)
    if (!inside(m, room.dims)) throw DataError("microphone lies outside the room");
  if (opts.sample_rate <= 0) throw DataError("sample rate must be positive");

  const std::vector<ImageSource> images = enumerate_images(room, opts.max_order);
  const int half = opts.sinc_half_width;
  const double fs = opts.sample_rate;

  double max_delay = 0.0;
  for (const auto& mic : array.positions)
    for (const auto& img : images)
      max_delay = std::max(max_delay, distance(img.position, mic) / room.sound_speed * fs);
  const int length = static_cast<int>(std::ceil(max_delay)) + half + 1;

  Rir rir;
  rir.sample_rate = opts.sample_rate;
  rir.taps.assign(array.channels(), std::vector<double>(length, 0.0));
  for (int c = 0; c < array.channels(); ++c) {
    auto& taps = rir.taps[c];
    for (const auto& img : images) {
      if (img.reflection_gain == 0.0) continue;
      const double d = distance(img.position, array.positions[c]);
      const double amplitude = img.reflection_gain / (4.0 * std::numbers::pi * d);
      const double delay = d / room.sound_speed * fs;
      const int center = static_cast<int>(std::floor(delay));
      for (int k = center - half; k <= center + half + 1; ++k) {
        if (k < 0 || k >= length) continue;
        const double x = k - delay;
        if (std::abs(x) >= half + 1) continue;
        const double sinc =
            x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
        const double window = 0.5 + 0.5 * std::cos(std::numbers::pi * x / (half + 1));
        taps[k] += amplitude * sinc * window;
      }
    }
  }
  return rir;
}

std::vector<double> convolve_direct(const std::vector<double>& x, const std::vector<double>& h) {
  if (x.empty() || h.empty()) return {};
  std::vector<double> y(x.size() + h.size() - 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < h.size(); ++j) y[i + j] += x[i] * h[j];
  return y;
}

std::vector<double> convolve_fft(const std::vector<double>& x, const std::vector<double>& h) {
  if (x.empty() || h.empty()) return {};
  const std::size_t out_len = x.size() + h.size() - 1;
  std::size_t n = 1;
  while (n < out_len) n <<= 1;

  std::vector<double> xp(n, 0.0), hp(n, 0.0);
  std::copy(x.begin(), x.end(), xp.begin());
  std::copy(h.begin(), h.end(), hp.begin());

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<cdouble> xf, hf;
  fft.fwd(xf, xp);
  fft.fwd(hf, hp);
  for (std::size_t i = 0; i < xf.size(); ++i) xf[i] *= hf[i];
  std::vector<double> y;
  fft.inv(y, xf, n);
  y.resize(out_len);
  return y;
}

Waveform simulate_multichannel(const Waveform& source, const Rir& rir) {
  if (source.num_channels() != 1) throw DataError("simulation source must be single-channel");
  if (source.sample_rate != rir.sample_rate)
    throw DataError("sample rate mismatch between source and RIR");
  if (rir.channels() == 0) throw DataError("RIR has no channels");
  Waveform out;
  out.sample_rate = source.sample_rate;
  out.samples.reserve(rir.channels());
  for (const auto& taps : rir.taps) out.samples.push_back(convolve_fft(source.samples[0], taps));
  return out;
}

namespace {

double power(const std::vector<double>& x, std::size_t n) {
  double p = 0.0;
  for (std::size_t i = 0; i < n; ++i) p += x[i] * x[i];
  return n == 0 ? 0.0 : p / n;
}

void check_mix_inputs(const Waveform& speech, const Waveform& noise, int ref_channel) {
  if (speech.num_channels() != noise.num_channels())
    throw DataError("speech and noise channel counts differ");
  if (speech.sample_rate != noise.sample_rate)
    throw DataError("speech and noise sample rates differ");
  if (noise.num_samples() < speech.num_samples())
    throw DataError("noise is shorter than speech");
  if (ref_channel < 0 || ref_channel >= speech.num_channels())
    throw DataError("reference channel out of range");
}

}  // namespace

double noise_gain_for_snr(const Waveform& speech, const Waveform& noise, double snr_db,
                          int ref_channel) {
  check_mix_inputs(speech, noise, ref_channel);
  const std::size_t n = speech.num_samples();
  const double ps = power(speech.samples[ref_channel], n);
  if (ps <= 0.0) throw DataError("speech has zero power");
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  const double pn = power(noise.samples[ref_channel], n);
  if (pn <= 0.0) throw DataError("noise has zero power");
  return std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
}

Waveform mix_at_snr(const Waveform& speech, const Waveform& noise, double snr_db,
                    int ref_channel) {
  const double gain = noise_gain_for_snr(speech, noise, snr_db, ref_channel);
  Waveform out = speech;
  for (int c = 0; c < out.num_channels(); ++c)
    for (int i = 0; i < out.num_samples(); ++i) out.samples[c][i] += gain * noise.samples[c][i];
  return out;
}

namespace {

using nlohmann::json;

Point3 read_point(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3)
    throw DataError(std::string("room config: '") + what + "' must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

RoomConfig parse_room_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw DataError(std::string("room config: ") + e.what());
  }
  if (!j.is_object()) throw DataError("room config must be a JSON object");

  RoomConfig cfg;
  cfg.array = chime4_array(kDefaultArrayCenter);
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "dims") {
        cfg.room.dims = read_point(value, "dims");
      } else if (key == "absorption") {
        if (value.is_number()) {
          cfg.room.absorption.fill(value.get<double>());
        } else if (value.is_array() && value.size() == 6) {
          for (int w = 0; w < 6; ++w) cfg.room.absorption[w] = value[w].get<double>();
        } else {
          throw DataError("room config: 'absorption' must be a number or 6-element array");
        }
      } else if (key == "source") {
        cfg.room.source = read_point(value, "source");
      } else if (key == "sound_speed") {
        cfg.room.sound_speed = value.get<double>();
      } else if (key == "max_order") {
        cfg.rir.max_order = value.get<int>();
      } else if (key == "sample_rate") {
        cfg.rir.sample_rate = value.get<int>();
      } else if (key == "array") {
        if (!value.is_object()) throw DataError("room config: 'array' must be an object");
        Point3 center = kDefaultArrayCenter;
        std::string preset = "chime4-6ch";
        bool have_positions = false;
        for (const auto& [akey, avalue] : value.items()) {
          if (akey == "preset") {
            preset = avalue.get<std::string>();
          } else if (akey == "center") {
            center = read_point(avalue, "array.center");
          } else if (akey == "positions") {
            have_positions = true;
            cfg.array = MicArray{};
            for (const auto& p : avalue) cfg.array.positions.push_back(read_point(p, "array.positions"));
          } else {
            throw DataError("room config: unknown key 'array." + akey + "'");
          }
        }
        if (!have_positions) cfg.array = preset_array(preset, center);
      } else {
        throw DataError("room config: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("room config: ") + e.what());
  }
  cfg.room.validate();
  return cfg;
}

RoomConfig load_room_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open room config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_room_config(ss.str());
}

std::string room_config_to_json(const RoomConfig& cfg) {
  json j;
  j["dims"] = cfg.room.dims;
  j["absorption"] = cfg.room.absorption;
  j["source"] = cfg.room.source;
  j["sound_speed"] = cfg.room.sound_speed;
  j["max_order"] = cfg.rir.max_order;
  j["sample_rate"] = cfg.rir.sample_rate;
  j["array"] = {{"positions", cfg.array.positions}};
  return j.dump(2);
}

}  // namespace beamlab
