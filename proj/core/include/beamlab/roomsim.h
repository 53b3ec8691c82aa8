#pragma once

// Shoebox-room image-source simulation of multi-channel audio from a
// single-channel source.

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "beamlab/dsp.h"

namespace beamlab {

using Point3 = std::array<double, 3>;

struct RoomSpec {
  Point3 dims{10.0, 7.5, 3.5};
  // Per-wall energy absorption in (0, 1], order: x=0, x=Lx, y=0, y=Ly, z=0, z=Lz.
  std::array<double, 6> absorption{0.35, 0.35, 0.35, 0.35, 0.35, 0.35};
  Point3 source{2.5, 3.73, 1.76};
  double sound_speed = 343.0;

  void validate() const;
};

struct MicArray {
  std::string preset = "custom";
  std::vector<Point3> positions;

  int channels() const { return static_cast<int>(positions.size()); }
};

// Rectangular 2 x 3 grid, 10 cm spacing, centred at `center` in the
// horizontal plane. Approximates a tablet-frame six-microphone array.
MicArray chime4_array(const Point3& center);
// Eight microphones on a horizontal circle of radius 5 cm.
MicArray aishell4_array(const Point3& center);
// Resolves "chime4-6ch" or "aishell4-8ch-circular"; throws UsageError otherwise.
MicArray preset_array(const std::string& name, const Point3& center);

inline const Point3 kDefaultArrayCenter{4.5, 3.0, 1.5};

struct Rir {
  int sample_rate = 16000;
  std::vector<std::vector<double>> taps;  // taps[channel][n]

  int channels() const { return static_cast<int>(taps.size()); }
  int length() const { return taps.empty() ? 0 : static_cast<int>(taps.front().size()); }
};

struct RirOptions {
  int max_order = 10;
  int sample_rate = 16000;
  int sinc_half_width = 40;
};

// One mirrored source of the image method.
struct ImageSource {
  Point3 position;
  int order = 0;
  double reflection_gain = 1.0;  // product of per-wall amplitude reflection coefficients
};

// Images with total reflection order <= max_order (direct path included).
std::vector<ImageSource> enumerate_images(const RoomSpec& room, int max_order);

// Each image contributes gain / (4 pi distance) as a Hann-windowed sinc
// centred at distance / c * fs samples. Taps that would fall before t = 0
// are dropped.
Rir image_source_rir(const RoomSpec& room, const MicArray& array, const RirOptions& opts = {});

// Full linear convolution of a one-channel source with every RIR channel.
Waveform simulate_multichannel(const Waveform& source, const Rir& rir);

// Naive O(n m) convolution; used as a reference.
std::vector<double> convolve_direct(const std::vector<double>& x, const std::vector<double>& h);
// FFT overlap-free convolution, output length n + m - 1.
std::vector<double> convolve_fft(const std::vector<double>& x, const std::vector<double>& h);

inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

// Scales noise so that the reference-channel SNR equals snr_db and returns
// speech + scaled noise. Noise longer than speech is truncated.
Waveform mix_at_snr(const Waveform& speech, const Waveform& noise, double snr_db,
                    int ref_channel = 0);

// Gain applied to the noise by mix_at_snr.
double noise_gain_for_snr(const Waveform& speech, const Waveform& noise, double snr_db,
                          int ref_channel = 0);

struct RoomConfig {
  RoomSpec room;
  MicArray array;
  RirOptions rir;
};

// JSON schema:
// {
//   "dims": [Lx, Ly, Lz],                       // metres
//   "absorption": 0.35 | [a_x0, a_x1, a_y0, a_y1, a_z0, a_z1],
//   "source": [x, y, z],
//   "sound_speed": 343,
//   "max_order": 10,
//   "sample_rate": 16000,
//   "array": {"preset": "chime4-6ch" | "aishell4-8ch-circular", "center": [x, y, z]}
//          | {"positions": [[x, y, z], ...]}
// }
// Every key is optional; unknown keys are rejected.
RoomConfig parse_room_config(const std::string& json_text);
RoomConfig load_room_config(const std::string& path);
std::string room_config_to_json(const RoomConfig& cfg);

}  // namespace beamlab
