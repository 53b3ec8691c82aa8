#pragma once

// RIFF/WAVE audio and JSON-lines utterance manifests.

#include <string>
#include <vector>

#include "beamlab/backend.h"
#include "beamlab/dsp.h"

namespace beamlab {

enum class SampleFormat { kPcm16, kFloat32 };

struct WavInfo {
  int channels = 0;
  int sample_rate = 0;
  int bits_per_sample = 0;
  SampleFormat format = SampleFormat::kPcm16;
  long long frames = 0;
};

// Reads PCM16 or IEEE float32 RIFF/WAVE (plain or WAVE_FORMAT_EXTENSIBLE).
// Samples are scaled to [-1, 1].
Waveform read_wav(const std::string& path);
WavInfo read_wav_info(const std::string& path);

struct WavWriteResult {
  long long clipped = 0;  // samples with |x| > 1 that were clipped
};

WavWriteResult write_wav(const std::string& path, const Waveform& wave,
                         SampleFormat format = SampleFormat::kFloat32);

enum class Origin { kReal, kSimulated, kSingle };

std::string to_string(Origin origin);
Origin parse_origin(const std::string& s);

struct ManifestEntry {
  std::string id;
  std::string path;  // relative paths resolve against the manifest directory
  int channels = 1;
  int sample_rate = 16000;
  double duration = 0.0;  // seconds
  LabelSequence tokens;
  Origin origin = Origin::kReal;

  bool operator==(const ManifestEntry&) const = default;
};

using Manifest = std::vector<ManifestEntry>;

inline constexpr int kManifestVersion = 1;

// First line is a header {"schema": "beamlab-manifest", "version": 1}; it may
// be omitted. Malformed lines report their 1-based line number; duplicate ids
// are rejected.
Manifest load_manifest(const std::string& path);
Manifest parse_manifest(const std::string& text);
void save_manifest(const std::string& path, const Manifest& manifest);
std::string format_manifest(const Manifest& manifest);

// Audio path of `entry` resolved against the directory of `manifest_path`.
std::string resolve_audio_path(const std::string& manifest_path, const ManifestEntry& entry);

// Opens every referenced file and checks channel count and sample rate.
void verify_manifest_audio(const std::string& manifest_path, const Manifest& manifest);

}  // namespace beamlab
