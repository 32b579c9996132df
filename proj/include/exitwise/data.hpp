// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "exitwise/tensor.hpp"

namespace exitwise {

struct LabeledClip {
  std::vector<float> samples;  // in [-1, 1]
  int sample_rate = 0;
  int label = 0;
  std::string speaker_id;
};

using Corpus = std::vector<LabeledClip>;

struct SynthOptions {
  std::uint64_t seed = 7;
  std::size_t n_per_class = 140;
  std::size_t classes = 7;
  std::size_t length = 72;
  int sample_rate = 1600;
  std::size_t speakers = 14;
  /// 0 gives well separated classes; larger values widen every class's
  /// frequency band and noise so neighbouring classes overlap.
  double overlap = 0.5;
};

/// Class c is a harmonic tone whose fundamental lies in a class-specific
/// band, amplitude-modulated at a class-specific rate, plus class-specific
/// noise. Speakers shift the pitch by a per-speaker factor. Clips are
/// ordered by class; clip i of each class belongs to speaker i mod speakers.
Corpus synth_corpus(const SynthOptions& options);

struct Split {
  Corpus train, dev, test;
};

/// Assigns whole speakers to partitions: speakers are sorted, shuffled with
/// `seed`, and cut by `ratios` (train and dev rounded, test takes the rest).
Split split_speaker_disjoint(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed);

/// One manifest row: relative path, label name, speaker id (tab-separated).
struct ManifestRow {
  std::string path;
  std::string label;
  std::string speaker_id;
};

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

struct WavData {
  std::vector<float> samples;
  int sample_rate = 0;
};

/// RIFF/WAVE, mono, PCM16 or IEEE float32. Never resamples or downmixes.
WavData read_wav(const std::filesystem::path& path);
void write_wav_pcm16(const std::filesystem::path& path, const std::vector<float>& samples, int sample_rate);

/// Reads `path` and labels it from the manifest row whose path matches
/// `path` relative to `root`. Label names map through `class_names`.
LabeledClip ingest_wav(const std::filesystem::path& path, const std::filesystem::path& root,
                       const std::vector<ManifestRow>& manifest, const std::vector<std::string>& class_names);

/// Every manifest row, ingested.
Corpus ingest_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& root,
                       const std::vector<std::string>& class_names);

/// Corpus cache in the checkpoint container format.
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& path);

/// Batch of waveforms cropped or zero-padded to `length`.
struct Batch {
  Tensor wave;  // [B, length]
  std::vector<int> labels;
};

/// Rejects clips whose sample rate differs from `sample_rate`.
Batch make_batch(const Corpus& corpus, const std::vector<std::size_t>& indices, std::size_t length, int sample_rate);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  void add(int truth, int predicted, std::uint64_t count = 1);
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts_[truth * classes_ + predicted]; }
  std::uint64_t row_sum(std::size_t truth) const;
  std::size_t classes() const { return classes_; }

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Unweighted average recall in percent. Classes without samples are left
/// out of the average; throws DataError when every row is empty.
double uar(const ConfusionMatrix& cm);

}  // namespace exitwise
