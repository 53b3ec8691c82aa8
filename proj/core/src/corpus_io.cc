#include "beamlab/corpus_io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "beamlab/error.h"

namespace beamlab {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xFF));
  s.push_back(static_cast<char>(v >> 8));
}
void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct ParsedWav {
  WavInfo info;
  std::size_t data_offset = 0;
};

ParsedWav parse_header(const std::string& bytes, const std::string& path) {
  const auto* b = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(b, "RIFF", 4) != 0 || std::memcmp(b + 8, "WAVE", 4) != 0)
    throw DataError("unsupported codec: " + path + " is not a RIFF/WAVE file");

  ParsedWav out;
  bool have_fmt = false;
  std::uint16_t tag = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = le32(b + pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(b + pos, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw DataError("truncated WAV file: " + path);
      tag = le16(b + body);
      out.info.channels = le16(b + body + 2);
      out.info.sample_rate = static_cast<int>(le32(b + body + 4));
      out.info.bits_per_sample = le16(b + body + 14);
      if (tag == kFormatExtensible) {
        if (size < 40) throw DataError("truncated WAV file: " + path);
        tag = le16(b + body + 24);  // first two bytes of the subformat GUID
      }
      have_fmt = true;
    } else if (std::memcmp(b + pos, "data", 4) == 0) {
      if (!have_fmt) throw DataError("malformed WAV file (data before fmt): " + path);
      if (tag == kFormatPcm && out.info.bits_per_sample == 16) {
        out.info.format = SampleFormat::kPcm16;
      } else if (tag == kFormatFloat && out.info.bits_per_sample == 32) {
        out.info.format = SampleFormat::kFloat32;
      } else {
        throw DataError("unsupported codec: format tag " + std::to_string(tag) + " with " +
                        std::to_string(out.info.bits_per_sample) + " bits in " + path);
      }
      if (out.info.channels <= 0) throw DataError("WAV file declares no channels: " + path);
      if (body + size > bytes.size()) throw DataError("truncated WAV file: " + path);
      const std::size_t frame_bytes =
          static_cast<std::size_t>(out.info.channels) * out.info.bits_per_sample / 8;
      if (size % frame_bytes != 0) throw DataError("truncated WAV file: " + path);
      out.info.frames = static_cast<long long>(size / frame_bytes);
      out.data_offset = body;
      return out;
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt) throw DataError("unsupported codec: missing fmt chunk in " + path);
  throw DataError("truncated WAV file (no data chunk): " + path);
}

}  // namespace

WavInfo read_wav_info(const std::string& path) { return parse_header(read_file(path), path).info; }

Waveform read_wav(const std::string& path) {
  const std::string bytes = read_file(path);
  const ParsedWav parsed = parse_header(bytes, path);
  const WavInfo& info = parsed.info;
  Waveform w = Waveform::zeros(info.channels, static_cast<int>(info.frames), info.sample_rate);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + parsed.data_offset;
  for (long long n = 0; n < info.frames; ++n) {
    for (int c = 0; c < info.channels; ++c) {
      if (info.format == SampleFormat::kPcm16) {
        const auto v = static_cast<std::int16_t>(le16(p));
        w.samples[c][n] = v / 32768.0;
        p += 2;
      } else {
        const float v = std::bit_cast<float>(le32(p));
        w.samples[c][n] = v;
        p += 4;
      }
    }
  }
  return w;
}

WavWriteResult write_wav(const std::string& path, const Waveform& wave, SampleFormat format) {
  if (wave.num_channels() <= 0) throw DataError("cannot write a WAV file with no channels");
  for (const auto& ch : wave.samples)
    if (ch.size() != wave.samples.front().size())
      throw DataError("cannot write ragged waveform");

  const int channels = wave.num_channels();
  const std::size_t frames = wave.num_samples();
  const int bits = format == SampleFormat::kPcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(frames * channels * bits / 8);

  std::string out;
  out.reserve(44 + data_bytes);
  out += "RIFF";
  put32(out, 36 + data_bytes);
  out += "WAVE";
  out += "fmt ";
  put32(out, 16);
  put16(out, format == SampleFormat::kPcm16 ? kFormatPcm : kFormatFloat);
  put16(out, static_cast<std::uint16_t>(channels));
  put32(out, static_cast<std::uint32_t>(wave.sample_rate));
  put32(out, static_cast<std::uint32_t>(wave.sample_rate * channels * bits / 8));
  put16(out, static_cast<std::uint16_t>(channels * bits / 8));
  put16(out, static_cast<std::uint16_t>(bits));
  out += "data";
  put32(out, data_bytes);

  WavWriteResult result;
  for (std::size_t n = 0; n < frames; ++n) {
    for (int c = 0; c < channels; ++c) {
      double v = wave.samples[c][n];
      if (!std::isfinite(v)) throw DataError("cannot write non-finite sample");
      if (std::abs(v) > 1.0) {
        ++result.clipped;
        v = std::clamp(v, -1.0, 1.0);
      }
      if (format == SampleFormat::kPcm16) {
        const long q = std::clamp(std::lround(v * 32768.0), -32768L, 32767L);
        put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
      } else {
        put32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("failed writing " + path);
  return result;
}

std::string to_string(Origin origin) {
  switch (origin) {
    case Origin::kReal: return "real";
    case Origin::kSimulated: return "simulated";
    case Origin::kSingle: return "single";
  }
  return "real";
}

Origin parse_origin(const std::string& s) {
  if (s == "real") return Origin::kReal;
  if (s == "simulated") return Origin::kSimulated;
  if (s == "single") return Origin::kSingle;
  throw DataError("unknown origin tag '" + s + "'");
}

namespace {

using nlohmann::json;

json entry_to_json(const ManifestEntry& e) {
  return json{{"id", e.id},
              {"path", e.path},
              {"channels", e.channels},
              {"sample_rate", e.sample_rate},
              {"duration", e.duration},
              {"tokens", e.tokens},
              {"origin", to_string(e.origin)}};
}

ManifestEntry entry_from_json(const json& j) {
  static const std::set<std::string> kKeys = {"id",       "path",   "channels", "sample_rate",
                                              "duration", "tokens", "origin"};
  if (!j.is_object()) throw DataError("record is not a JSON object");
  for (const auto& [key, value] : j.items())
    if (!kKeys.contains(key)) throw DataError("unknown key '" + key + "'");
  ManifestEntry e;
  e.id = j.at("id").get<std::string>();
  if (e.id.empty()) throw DataError("empty utterance id");
  e.path = j.value("path", std::string{});
  e.channels = j.value("channels", 1);
  e.sample_rate = j.value("sample_rate", 16000);
  e.duration = j.value("duration", 0.0);
  e.tokens = j.value("tokens", LabelSequence{});
  e.origin = parse_origin(j.value("origin", std::string("real")));
  return e;
}

}  // namespace

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.is_object() && j.contains("schema")) {
        if (j.at("schema") != "beamlab-manifest")
          throw DataError("unknown manifest schema");
        if (j.value("version", 0) != kManifestVersion)
          throw DataError("unsupported manifest version");
        continue;
      }
      ManifestEntry e = entry_from_json(j);
      if (!ids.insert(e.id).second) throw DataError("duplicate utterance id '" + e.id + "'");
      m.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return m;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

std::string format_manifest(const Manifest& manifest) {
  std::string out =
      json{{"schema", "beamlab-manifest"}, {"version", kManifestVersion}}.dump() + "\n";
  for (const auto& e : manifest) out += entry_to_json(e).dump() + "\n";
  return out;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << format_manifest(manifest);
  if (!out) throw DataError("failed writing manifest: " + path);
}

std::string resolve_audio_path(const std::string& manifest_path, const ManifestEntry& entry) {
  const std::filesystem::path p(entry.path);
  if (p.is_absolute()) return p.string();
  return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

void verify_manifest_audio(const std::string& manifest_path, const Manifest& manifest) {
  for (const auto& e : manifest) {
    const std::string path = resolve_audio_path(manifest_path, e);
    if (!std::filesystem::exists(path))
      throw DataError("utterance '" + e.id + "': audio file not found: " + path);
    const WavInfo info = read_wav_info(path);
    if (info.channels != e.channels)
      throw DataError("utterance '" + e.id + "': manifest says " + std::to_string(e.channels) +
                      " channels, file has " + std::to_string(info.channels));
    if (info.sample_rate != e.sample_rate)
      throw DataError("utterance '" + e.id + "': sample rate mismatch");
  }
}

}  // namespace beamlab
