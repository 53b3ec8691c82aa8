#include "beamlab/corpus_io.h"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "beamlab/error.h"
#include "test_util.h"

namespace beamlab {
namespace {

using testing::random_waveform;
using testing::TempDir;

std::vector<unsigned char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint32_t u32(const std::vector<unsigned char>& b, std::size_t at) {
  return b[at] | (b[at + 1] << 8) | (b[at + 2] << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}
std::uint16_t u16(const std::vector<unsigned char>& b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

TEST(Wav, Float32RoundTripIsBitExact) {
  TempDir dir("wav");
  const Waveform w = random_waveform(3, 1234, 1, 0.3);
  Waveform clamped = w;
  for (auto& ch : clamped.samples)
    for (double& v : ch) v = static_cast<float>(std::clamp(v, -1.0, 1.0));
  write_wav(dir.file("a.wav"), clamped, SampleFormat::kFloat32);
  const Waveform back = read_wav(dir.file("a.wav"));
  EXPECT_EQ(back.sample_rate, 16000);
  EXPECT_EQ(back.samples, clamped.samples);
}

TEST(Wav, Pcm16SineWithinOneStep) {
  TempDir dir("wav");
  Waveform w = Waveform::zeros(1, 1600, 16000);
  for (int i = 0; i < 1600; ++i) w.samples[0][i] = std::sin(2 * std::numbers::pi * 100 * i / 16000.0);
  write_wav(dir.file("s.wav"), w, SampleFormat::kPcm16);
  const WavInfo info = read_wav_info(dir.file("s.wav"));
  EXPECT_EQ(info.bits_per_sample, 16);
  EXPECT_EQ(info.format, SampleFormat::kPcm16);
  const Waveform back = read_wav(dir.file("s.wav"));
  double peak = 0.0, err = 0.0;
  for (int i = 0; i < 1600; ++i) {
    peak = std::max(peak, std::abs(back.samples[0][i]));
    err = std::max(err, std::abs(back.samples[0][i] - w.samples[0][i]));
  }
  EXPECT_NEAR(peak, 1.0, 1.0 / 32768);
  EXPECT_LE(err, 1.0 / 32768);
}

TEST(Wav, NonWavIsUnsupportedCodec) {
  TempDir dir("wav");
  std::ofstream(dir.file("x.wav")) << "this is plainly not audio, but long enough to have a header";
  try {
    read_wav(dir.file("x.wav"));
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported codec"), std::string::npos) << e.what();
  }
}

TEST(Wav, OtherFormatTagNamesTheCodec) {
  TempDir dir("wav");
  write_wav(dir.file("a.wav"), random_waveform(1, 10, 2, 0.1), SampleFormat::kPcm16);
  auto bytes = slurp(dir.file("a.wav"));
  bytes[20] = 6;  // A-law
  bytes[21] = 0;
  spit(dir.file("a.wav"), bytes);
  try {
    read_wav(dir.file("a.wav"));
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported codec: format tag 6"), std::string::npos)
        << e.what();
  }
}

TEST(Wav, TruncatedFile) {
  TempDir dir("wav");
  write_wav(dir.file("a.wav"), random_waveform(2, 100, 3, 0.1));
  auto bytes = slurp(dir.file("a.wav"));
  bytes.resize(bytes.size() - 7);
  spit(dir.file("a.wav"), bytes);
  try {
    read_wav(dir.file("a.wav"));
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
  }
}

TEST(Wav, MissingFile) {
  EXPECT_THROW(read_wav("/nonexistent/dir/a.wav"), DataError);
}

TEST(Wav, ZeroLengthIsValid) {
  TempDir dir("wav");
  write_wav(dir.file("z.wav"), Waveform::zeros(2, 0, 8000));
  const auto bytes = slurp(dir.file("z.wav"));
  EXPECT_EQ(u32(bytes, bytes.size() - 4), 0u);  // data chunk size
  const Waveform back = read_wav(dir.file("z.wav"));
  EXPECT_EQ(back.num_channels(), 2);
  EXPECT_EQ(back.num_samples(), 0);
  EXPECT_EQ(back.sample_rate, 8000);
}

TEST(Wav, ClippedSamplesAreCounted) {
  TempDir dir("wav");
  Waveform w = Waveform::zeros(2, 10, 16000);
  w.samples[0][3] = 1.5;
  w.samples[1][7] = -2.0;
  w.samples[1][8] = 1.0;
  for (SampleFormat f : {SampleFormat::kFloat32, SampleFormat::kPcm16}) {
    EXPECT_EQ(write_wav(dir.file("c.wav"), w, f).clipped, 2);
    const Waveform back = read_wav(dir.file("c.wav"));
    EXPECT_NEAR(back.samples[0][3], 1.0, 1.0 / 32768);
    EXPECT_NEAR(back.samples[1][7], -1.0, 1.0 / 32768);
  }
}

TEST(Wav, NonFiniteSampleIsAnError) {
  TempDir dir("wav");
  Waveform w = Waveform::zeros(1, 4, 16000);
  w.samples[0][1] = std::nan("");
  EXPECT_THROW(write_wav(dir.file("n.wav"), w), DataError);
}

// Header and sample layout read byte by byte.
TEST(Wav, InterleavingMatchesIndependentReader) {
  TempDir dir("wav");
  const int C = 3, N = 50;
  Waveform w = Waveform::zeros(C, N, 22050);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < N; ++i) w.samples[c][i] = (c + 1) * 0.01 + i * 1e-4;
  write_wav(dir.file("i.wav"), w, SampleFormat::kFloat32);
  const auto b = slurp(dir.file("i.wav"));
  ASSERT_EQ(std::string(b.begin(), b.begin() + 4), "RIFF");
  ASSERT_EQ(std::string(b.begin() + 8, b.begin() + 12), "WAVE");
  EXPECT_EQ(u32(b, 4), b.size() - 8);

  std::size_t pos = 12, data = 0, data_size = 0;
  int channels = 0, rate = 0, bits = 0, tag = 0, align = 0;
  while (pos + 8 <= b.size()) {
    const std::string id(b.begin() + pos, b.begin() + pos + 4);
    const std::uint32_t size = u32(b, pos + 4);
    if (id == "fmt ") {
      tag = u16(b, pos + 8);
      channels = u16(b, pos + 10);
      rate = static_cast<int>(u32(b, pos + 12));
      align = u16(b, pos + 20);
      bits = u16(b, pos + 22);
      EXPECT_EQ(u32(b, pos + 16), static_cast<std::uint32_t>(rate * align));
    } else if (id == "data") {
      data = pos + 8;
      data_size = size;
    }
    pos += 8 + size + (size & 1);
  }
  EXPECT_EQ(tag, 3);  // IEEE float
  EXPECT_EQ(channels, C);
  EXPECT_EQ(rate, 22050);
  EXPECT_EQ(bits, 32);
  EXPECT_EQ(align, 4 * C);
  ASSERT_EQ(data_size, static_cast<std::size_t>(4 * C * N));
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c) {
      float v;
      std::memcpy(&v, &b[data + 4 * (i * C + c)], 4);
      EXPECT_EQ(v, static_cast<float>(w.samples[c][i]));
    }
}

TEST(Manifest, EmptyFileIsEmpty) {
  TempDir dir("man");
  std::ofstream(dir.file("m.jsonl")).flush();
  EXPECT_TRUE(load_manifest(dir.file("m.jsonl")).empty());
  EXPECT_TRUE(parse_manifest("\n\n").empty());
}

Manifest random_manifest(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(1, 9), len(0, 7), ch(1, 8), origin(0, 2);
  std::uniform_real_distribution<double> dur(0.1, 9.0);
  Manifest m;
  for (int i = 0; i < n; ++i) {
    ManifestEntry e;
    e.id = "utt-" + std::to_string(seed) + "-" + std::to_string(i);
    e.path = "audio/" + e.id + ".wav";
    e.channels = ch(rng);
    e.sample_rate = i % 2 ? 16000 : 8000;
    e.duration = dur(rng);
    for (int k = len(rng); k > 0; --k) e.tokens.push_back(tok(rng));
    e.origin = static_cast<Origin>(origin(rng));
    m.push_back(e);
  }
  return m;
}

TEST(Manifest, SaveLoadIdentity) {
  TempDir dir("man");
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Manifest m = random_manifest(seed, 12);
    save_manifest(dir.file("m.jsonl"), m);
    EXPECT_EQ(load_manifest(dir.file("m.jsonl")), m);
    EXPECT_EQ(parse_manifest(format_manifest(m)), m);
  }
}

TEST(Manifest, DuplicateIdNamesTheId) {
  const std::string text = "{\"id\": \"a\"}\n{\"id\": \"b\"}\n{\"id\": \"a\"}\n";
  try {
    parse_manifest(text);
    FAIL() << "expected an error";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'a'"), std::string::npos) << msg;
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  }
}

TEST(Manifest, MalformedLineReportsLineNumber) {
  const std::string header = "{\"schema\": \"beamlab-manifest\", \"version\": 1}\n";
  for (const auto& [bad, line] : std::vector<std::pair<std::string, std::string>>{
           {header + "{\"id\": \"a\"}\n{\"id\": \n", "line 3"},
           {header + "{\"id\": \"a\", \"colour\": 1}\n", "line 2"},
           {"{\"id\": \"a\", \"origin\": \"alien\"}\n", "line 1"},
           {"{\"schema\": \"beamlab-manifest\", \"version\": 9}\n", "line 1"},
           {"[1, 2]\n", "line 1"}}) {
    try {
      parse_manifest(bad);
      FAIL() << "expected an error for " << bad;
    } catch (const DataError& e) {
      EXPECT_NE(std::string(e.what()).find(line), std::string::npos) << e.what();
    }
  }
}

TEST(Manifest, AudioVerification) {
  TempDir dir("man");
  std::filesystem::create_directories(dir.path() / "audio");
  write_wav(dir.file("audio/u1.wav"), random_waveform(2, 160, 1, 0.1));
  ManifestEntry e;
  e.id = "u1";
  e.path = "audio/u1.wav";
  e.channels = 2;
  e.duration = 0.01;
  Manifest m{e};
  save_manifest(dir.file("m.jsonl"), m);
  EXPECT_EQ(resolve_audio_path(dir.file("m.jsonl"), e),
            (dir.path() / "audio/u1.wav").string());
  EXPECT_NO_THROW(verify_manifest_audio(dir.file("m.jsonl"), m));
  m[0].channels = 3;
  EXPECT_THROW(verify_manifest_audio(dir.file("m.jsonl"), m), DataError);
  m[0].channels = 2;
  m[0].path = "audio/missing.wav";
  EXPECT_THROW(verify_manifest_audio(dir.file("m.jsonl"), m), DataError);
}

TEST(Origin, RoundTrip) {
  for (Origin o : {Origin::kReal, Origin::kSimulated, Origin::kSingle})
    EXPECT_EQ(parse_origin(to_string(o)), o);
  EXPECT_THROW(parse_origin("synthetic"), DataError);
}

}  // namespace
}  // namespace beamlab
