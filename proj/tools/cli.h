#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "beamlab/sched.h"

namespace beamlab::cli {

// Runs the command line; returns the process exit code (0 ok, 1 usage,
// 2 data, 3 numerical).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Seed from BEAMLAB_SEED, if set. Throws UsageError when it is not an
// unsigned integer.
std::optional<std::uint64_t> env_seed();

// A generated finite-difference instance.
struct GradcheckInstance {
  TrainState state;
  Spectrogram utt;
  LabelSequence labels;
};

// "tiny": 2 channels, 12 frames, 9 bins. "small": 4 channels, 20 frames, 17 bins.
GradcheckInstance gradcheck_instance(const std::string& preset, std::uint64_t seed);

inline constexpr double kGradcheckTolerance = 1e-4;

// Parsed `train` configuration file. Paths are resolved against the file's
// directory.
struct TrainJob {
  ScheduleConfig schedule;
  std::optional<CorpusConfig> corpus;
  std::string multi_manifest;
  std::string single_manifest;
  std::string test_manifest;
  std::string report_path;
  std::string checkpoint_path;
};

TrainJob parse_train_job(const std::string& json_text, const std::string& base_dir);
TrainJob load_train_job(const std::string& path);

struct TrainData {
  std::vector<Utterance> multi;
  std::vector<Utterance> single;
  std::vector<Utterance> test;
};

// Generates the toy corpus or loads the manifests named by the job.
TrainData load_train_data(const TrainJob& job);

}  // namespace beamlab::cli
