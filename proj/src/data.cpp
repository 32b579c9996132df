// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numbers>
#include <set>
#include <sstream>

#include "exitwise/checkpoint.hpp"
#include "exitwise/error.hpp"
#include "exitwise/rng.hpp"

namespace exitwise {

Corpus synth_corpus(const SynthOptions& o) {
  if (o.n_per_class == 0 || o.classes == 0 || o.length == 0 || o.speakers == 0 || o.sample_rate <= 0)
    throw ConfigError("synthetic corpus needs positive counts, length and sample rate");
  Rng rng(o.seed);
  const double nyquist = o.sample_rate / 2.0;
  // Per-speaker pitch factor in [0.9, 1.1].
  std::vector<double> pitch(o.speakers);
  for (auto& p : pitch) p = 1.0 + 0.1 * rng.uniform(-1.0, 1.0);

  const double two_pi = 2.0 * std::numbers::pi;
  Corpus corpus;
  corpus.reserve(o.n_per_class * o.classes);
  for (std::size_t c = 0; c < o.classes; ++c) {
    // Fundamentals spread over [0.06, 0.3] of Nyquist; AM rates and noise
    // levels cycle with different periods so no single cue decides alone.
    const double frac = o.classes == 1 ? 0.5 : static_cast<double>(c) / static_cast<double>(o.classes - 1);
    const double f0 = nyquist * (0.06 + 0.24 * frac);
    const double band = nyquist * 0.02 * (1.0 + 2.0 * o.overlap);
    const double am_rate = o.sample_rate * (0.01 + 0.01 * static_cast<double>(c % 3));
    const double noise = 0.05 + 0.05 * static_cast<double>(c % 2) + 0.15 * o.overlap;
    for (std::size_t i = 0; i < o.n_per_class; ++i) {
      const std::size_t spk = i % o.speakers;
      const double f = (f0 + band * rng.uniform(-1.0, 1.0)) * pitch[spk];
      const double phase = rng.uniform(0.0, two_pi);
      const double am_phase = rng.uniform(0.0, two_pi);
      const double gain = 0.5 + 0.2 * rng.uniform(-1.0, 1.0);
      LabeledClip clip;
      clip.sample_rate = o.sample_rate;
      clip.label = static_cast<int>(c);
      clip.speaker_id = "spk" + std::to_string(spk);
      clip.samples.resize(o.length);
      for (std::size_t t = 0; t < o.length; ++t) {
        const double tt = static_cast<double>(t) / o.sample_rate;
        const double env = 0.5 * (1.0 + 0.8 * std::sin(two_pi * am_rate * tt + am_phase));
        double s = std::sin(two_pi * f * tt + phase) + 0.4 * std::sin(2.0 * (two_pi * f * tt + phase));
        s = gain * env * s / 1.4 + noise * rng.normal();
        clip.samples[t] = static_cast<float>(std::clamp(s, -1.0, 1.0));
      }
      corpus.push_back(std::move(clip));
    }
  }
  return corpus;
}

Split split_speaker_disjoint(const Corpus& corpus, std::array<double, 3> ratios, std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  for (double r : ratios)
    if (!(r >= 0.0)) throw ConfigError("split ratios must be non-negative");
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError("split ratios must sum to 1");
  std::set<std::string> unique;
  for (const auto& c : corpus) unique.insert(c.speaker_id);
  if (unique.size() < 3)
    throw DataError(DataError::Kind::TooFewSpeakers,
                    "speaker-disjoint split needs at least 3 speakers, corpus has " + std::to_string(unique.size()));
  std::vector<std::string> speakers(unique.begin(), unique.end());
  Rng rng(seed);
  rng.shuffle(speakers);
  const auto n = static_cast<double>(speakers.size());
  auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * n));
  auto n_dev = static_cast<std::size_t>(std::llround(ratios[1] * n));
  n_train = std::min(n_train, speakers.size());
  n_dev = std::min(n_dev, speakers.size() - n_train);
  std::map<std::string, int> part;
  for (std::size_t i = 0; i < speakers.size(); ++i) part[speakers[i]] = i < n_train ? 0 : (i < n_train + n_dev ? 1 : 2);
  Split s;
  for (const auto& c : corpus) {
    switch (part[c.speaker_id]) {
      case 0: s.train.push_back(c); break;
      case 1: s.dev.push_back(c); break;
      default: s.test.push_back(c); break;
    }
  }
  return s;
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataError::Kind::Io, "cannot open manifest " + path.string());
  std::vector<ManifestRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3)
      throw DataError(DataError::Kind::MalformedHeader, path.string() + ":" + std::to_string(lineno) +
                                                            ": expected 3 tab-separated fields");
    rows.push_back({fields[0], fields[1], fields[2]});
  }
  return rows;
}

namespace {

std::uint32_t u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  using K = DataError::Kind;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(K::Io, "cannot open " + path.string());
  const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw DataError(K::MalformedHeader, name + ": not a RIFF/WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::uint32_t len = u32le(chunk + 4);
    if (pos + 8 + len > buf.size()) throw DataError(K::MalformedHeader, name + ": chunk runs past end of file");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16) throw DataError(K::MalformedHeader, name + ": fmt chunk too short");
      format = u16le(chunk + 8);
      channels = u16le(chunk + 10);
      rate = u32le(chunk + 12);
      bits = u16le(chunk + 22);
      if (format == 0xFFFE && len >= 40) format = u16le(chunk + 8 + 24);  // extensible: sub-format GUID
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = chunk + 8;
      data_len = len;
    }
    pos += 8 + len + (len & 1);
  }
  if (!have_fmt || data == nullptr) throw DataError(K::MalformedHeader, name + ": missing fmt or data chunk");
  if (channels != 1)
    throw DataError(K::UnsupportedEncoding, name + ": " + std::to_string(channels) + " channels, only mono is accepted");
  WavData out;
  out.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    out.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < out.samples.size(); ++i)
      out.samples[i] = static_cast<float>(static_cast<std::int16_t>(u16le(data + 2 * i))) / 32768.0f;
  } else if (format == 3 && bits == 32) {
    out.samples.resize(data_len / 4);
    for (std::size_t i = 0; i < out.samples.size(); ++i)
      out.samples[i] = std::clamp(std::bit_cast<float>(u32le(data + 4 * i)), -1.0f, 1.0f);
  } else {
    throw DataError(K::UnsupportedEncoding, name + ": format " + std::to_string(format) + " with " +
                                                std::to_string(bits) + " bits (need PCM16 or float32)");
  }
  if (out.samples.empty()) throw DataError(K::Empty, name + ": no samples");
  return out;
}

void write_wav_pcm16(const std::filesystem::path& path, const std::vector<float>& samples, int sample_rate) {
  std::vector<unsigned char> b;
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<unsigned char>(v >> (8 * i)));
  };
  auto put16 = [&](std::uint16_t v) {
    b.push_back(static_cast<unsigned char>(v));
    b.push_back(static_cast<unsigned char>(v >> 8));
  };
  auto tag = [&](const char* t) { b.insert(b.end(), t, t + 4); };
  const auto data_len = static_cast<std::uint32_t>(samples.size() * 2);
  tag("RIFF");
  put32(36 + data_len);
  tag("WAVE");
  tag("fmt ");
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(sample_rate));
  put32(static_cast<std::uint32_t>(sample_rate) * 2);
  put16(2);
  put16(16);
  tag("data");
  put32(data_len);
  for (float s : samples) {
    const long q = std::lround(std::clamp(static_cast<double>(s), -1.0, 1.0) * 32767.0);
    put16(static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(DataError::Kind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

LabeledClip ingest_wav(const std::filesystem::path& path, const std::filesystem::path& root,
                       const std::vector<ManifestRow>& manifest, const std::vector<std::string>& class_names) {
  const auto rel = std::filesystem::path(path).lexically_relative(root).generic_string();
  const auto row = std::find_if(manifest.begin(), manifest.end(), [&](const ManifestRow& r) {
    return std::filesystem::path(r.path).lexically_normal().generic_string() == rel;
  });
  if (row == manifest.end())
    throw DataError(DataError::Kind::MissingManifestRow, "no manifest row for " + rel);
  const auto label = std::find(class_names.begin(), class_names.end(), row->label);
  if (label == class_names.end())
    throw DataError(DataError::Kind::BadLabel, rel + ": label '" + row->label + "' is not a declared class");
  auto wav = read_wav(path);
  LabeledClip clip;
  clip.samples = std::move(wav.samples);
  clip.sample_rate = wav.sample_rate;
  clip.label = static_cast<int>(label - class_names.begin());
  clip.speaker_id = row->speaker_id;
  return clip;
}

Corpus ingest_manifest(const std::filesystem::path& manifest_path, const std::filesystem::path& root,
                       const std::vector<std::string>& class_names) {
  const auto rows = read_manifest(manifest_path);
  Corpus corpus;
  for (const auto& r : rows) corpus.push_back(ingest_wav(root / r.path, root, rows, class_names));
  return corpus;
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  Container c;
  c.architecture_hash = 0;
  std::vector<float> labels, rates;
  std::map<std::string, std::vector<float>> speakers;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& clip = corpus[i];
    c.tensors.push_back({"clip." + std::to_string(i), {clip.samples.size()}, clip.samples});
    labels.push_back(static_cast<float>(clip.label));
    rates.push_back(static_cast<float>(clip.sample_rate));
    speakers[clip.speaker_id].push_back(static_cast<float>(i));
  }
  if (!corpus.empty()) {
    c.tensors.push_back({"meta.labels", {labels.size()}, labels});
    c.tensors.push_back({"meta.sample_rates", {rates.size()}, rates});
  }
  for (auto& [id, idx] : speakers) c.tensors.push_back({"speaker." + id, {idx.size()}, idx});
  write_container(path, c);
}

Corpus load_corpus(const std::filesystem::path& path) {
  const auto c = read_container(path);
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& t : c.tensors) by_name[t.name] = &t;
  auto meta = [&](const std::string& n) -> const TensorRecord& {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw DataError(DataError::Kind::MalformedHeader, path.string() + ": missing " + n);
    return *it->second;
  };
  if (by_name.empty()) return {};
  const auto& labels = meta("meta.labels");
  const auto& rates = meta("meta.sample_rates");
  Corpus corpus(labels.data.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    corpus[i].samples = meta("clip." + std::to_string(i)).data;
    corpus[i].label = static_cast<int>(labels.data[i]);
    corpus[i].sample_rate = static_cast<int>(rates.data.at(i));
  }
  for (const auto& t : c.tensors) {
    if (t.name.rfind("speaker.", 0) != 0) continue;
    for (float idx : t.data) corpus.at(static_cast<std::size_t>(idx)).speaker_id = t.name.substr(8);
  }
  return corpus;
}

Batch make_batch(const Corpus& corpus, const std::vector<std::size_t>& indices, std::size_t length, int sample_rate) {
  if (indices.empty()) throw DataError(DataError::Kind::Empty, "empty batch");
  std::vector<float> wave(indices.size() * length, 0.0f);
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& clip = corpus.at(indices[b]);
    if (clip.sample_rate != sample_rate)
      throw DataError(DataError::Kind::SampleRateMismatch, "clip sampled at " + std::to_string(clip.sample_rate) +
                                                               " Hz, model expects " + std::to_string(sample_rate) +
                                                               " Hz");
    const std::size_t n = std::min(length, clip.samples.size());
    std::copy_n(clip.samples.begin(), n, wave.begin() + static_cast<std::ptrdiff_t>(b * length));
    labels.push_back(clip.label);
  }
  return {Tensor({indices.size(), length}, std::move(wave)), std::move(labels)};
}

void ConfusionMatrix::add(int truth, int predicted, std::uint64_t count) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= classes_ ||
      static_cast<std::size_t>(predicted) >= classes_)
    throw DataError(DataError::Kind::BadLabel, "confusion entry outside " + std::to_string(classes_) + " classes");
  counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(predicted)] += count;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t s = 0;
  for (std::size_t j = 0; j < classes_; ++j) s += at(truth, j);
  return s;
}

double uar(const ConfusionMatrix& cm) {
  double total = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto n = cm.row_sum(c);
    if (n == 0) continue;
    total += static_cast<double>(cm.at(c, c)) / static_cast<double>(n);
    ++used;
  }
  if (used == 0) throw DataError(DataError::Kind::Empty, "UAR of an empty confusion matrix");
  return 100.0 * total / static_cast<double>(used);
}

}  // namespace exitwise
