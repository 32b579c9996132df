// Copyright 2026 The Exitwise Authors
// SPDX-License-Identifier: Apache-2.0

#include "exitwise/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "exitwise/error.hpp"

namespace exitwise {

namespace {

using Kind = CheckpointError::Kind;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(const std::vector<char>& buf, const std::string& path) : buf_(buf), path_(path) {}

  void need(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size())
      throw CheckpointError(Kind::Truncated, path_ + ": truncated while reading " + what + " at byte " +
                                                 std::to_string(pos_));
  }
  template <typename U>
  U le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::vector<char>& buf_;
  const std::string& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_container(const std::filesystem::path& path, const Container& container) {
  Writer w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.le<std::uint32_t>(container.version);
  w.le<std::uint32_t>(container.architecture_hash);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(container.tensors.size()));
  for (const auto& t : container.tensors) {
    if (numel(t.shape) != t.data.size()) throw ShapeError("record '" + t.name + "' has inconsistent shape");
    if (t.shape.size() > 255) throw ShapeError("record '" + t.name + "' has rank above 255");
    w.le<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.le<std::uint64_t>(d);
    for (float v : t.data) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(Kind::Io, "cannot open " + path.string() + " for writing");
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw CheckpointError(Kind::Io, "failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::Io, "cannot open " + path.string());
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  Reader r(buf, name);
  if (buf.size() < sizeof(kCheckpointMagic) || std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointError(Kind::BadMagic, name + ": not an exitwise container (bad magic)");
  r.str(sizeof(kCheckpointMagic), "magic");
  Container c;
  c.version = r.le<std::uint32_t>("version");
  if (c.version != kCheckpointVersion)
    throw CheckpointError(Kind::BadVersion, name + ": unsupported format version " + std::to_string(c.version));
  c.architecture_hash = r.le<std::uint32_t>("architecture hash");
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    const auto len = r.le<std::uint32_t>("name length");
    t.name = r.str(len, "tensor name");
    const auto rank = r.le<std::uint8_t>("rank");
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(r.le<std::uint64_t>("extent"));
    const std::size_t n = numel(t.shape);
    r.need(n * 4, ("payload of '" + t.name + "'").c_str());
    t.data.resize(n);
    for (auto& v : t.data) v = std::bit_cast<float>(r.le<std::uint32_t>("payload"));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError(Kind::Truncated, name + ": trailing bytes after the last tensor");
  return c;
}

std::vector<TensorRecord> snapshot(const nn::ParameterList<float>& params) {
  std::vector<TensorRecord> out;
  out.reserve(params.size());
  for (const auto& p : params)
    out.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  return out;
}

std::size_t assign_parameters(const std::vector<TensorRecord>& records, const nn::ParameterList<float>& params,
                              bool require_all) {
  std::map<std::string, const TensorRecord*> by_name;
  for (const auto& r : records) by_name[r.name] = &r;
  std::vector<std::pair<BasicTensor<float>, const TensorRecord*>> plan;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      if (require_all) throw CheckpointError(Kind::MissingTensor, "checkpoint has no tensor '" + p.name + "'");
      continue;
    }
    if (it->second->shape != p.tensor.shape())
      throw CheckpointError(Kind::ShapeMismatch, "tensor '" + p.name + "' has shape " +
                                                     shape_str(it->second->shape) + ", model expects " +
                                                     shape_str(p.tensor.shape()));
    plan.emplace_back(p.tensor, it->second);
  }
  for (auto& [tensor, rec] : plan) std::copy(rec->data.begin(), rec->data.end(), tensor.mutable_data().begin());
  return plan.size();
}

void save_checkpoint(const ExitModel<float>& model, const std::filesystem::path& path) {
  write_container(path, Container{kCheckpointVersion, model.architecture_hash(), snapshot(model.parameters())});
}

void load_checkpoint_into(const std::filesystem::path& path, ExitModel<float>& model) {
  const auto c = read_container(path);
  if (c.architecture_hash != model.architecture_hash())
    throw CheckpointError(Kind::ArchitectureMismatch,
                          path.string() + ": architecture hash " + std::to_string(c.architecture_hash) +
                              " does not match the configured model (" + std::to_string(model.architecture_hash()) +
                              ")");
  const auto params = model.parameters();
  if (c.tensors.size() > params.size())
    throw CheckpointError(Kind::ShapeMismatch, path.string() + ": holds " + std::to_string(c.tensors.size()) +
                                                   " tensors, model has " + std::to_string(params.size()));
  assign_parameters(c.tensors, params, true);
}

MultiExitModel<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  MultiExitModel<float> model(config, 0);
  load_checkpoint_into(path, model);
  return model;
}

}  // namespace exitwise
