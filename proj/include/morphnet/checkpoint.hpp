#pragma once

// Checkpoint files:
//
//   "MRPH" | u32 LE version (1) | u64 LE header length | JSON header |
//   f32 LE tensor payloads in header order | u32 LE CRC-32 of the payloads
//
// The header carries the model spec, optimizer settings and counters, epoch,
// RNG state, training history, and {name, shape, offset} for every tensor.

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "morphnet/training.hpp"

namespace morphnet {

class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

inline constexpr char kCheckpointMagic[4] = {'M', 'R', 'P', 'H'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  json model;
  OptimSpec optim;
  json optim_meta = json::object();
  std::size_t epoch = 0;
  std::string rng_state;
  std::vector<EpochStats> history;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <class U>
void put_le(std::string& s, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

inline json history_json(const std::vector<EpochStats>& h) {
  json out = json::array();
  for (const auto& s : h) {
    json test = std::isnan(s.test_acc) ? json(nullptr) : json(s.test_acc);
    out.push_back({s.epoch, s.train_loss, s.train_acc, test});
  }
  return out;
}

inline std::vector<EpochStats> history_from_json(const json& j) {
  std::vector<EpochStats> out;
  for (const auto& r : j)
    out.push_back({r.at(0).get<std::size_t>(), r.at(1).get<double>(), r.at(2).get<double>(),
                   r.at(3).is_null() ? std::numeric_limits<double>::quiet_NaN() : r.at(3).get<double>()});
  return out;
}

}  // namespace detail

inline std::string checkpoint_bytes(const Checkpoint& c) {
  json optim = c.optim.to_json();
  optim["meta"] = c.optim_meta;
  json header{{"model", c.model},
              {"optim", optim},
              {"epoch", c.epoch},
              {"rng", c.rng_state},
              {"history", detail::history_json(c.history)},
              {"tensors", json::array()}};
  std::string payload;
  for (const auto& [name, t] : c.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    for (float v : t.data()) detail::put_le(payload, std::bit_cast<std::uint32_t>(v));
  }
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 4);
  detail::put_le(out, kCheckpointVersion);
  detail::put_le(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  out += payload;
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
  detail::put_le(out, crc);
  return out;
}

inline Checkpoint parse_checkpoint(const std::vector<unsigned char>& b, const std::string& source) {
  if (b.size() < 16) throw CheckpointError(source + ": truncated checkpoint header");
  if (std::memcmp(b.data(), kCheckpointMagic, 4) != 0) throw CheckpointError(source + ": not a checkpoint (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(&b[4]);
  if (version != kCheckpointVersion)
    throw CheckpointError(source + ": unsupported checkpoint version " + std::to_string(version));
  const auto hlen = detail::get_le<std::uint64_t>(&b[8]);
  if (b.size() - 16 < hlen) throw CheckpointError(source + ": truncated checkpoint header");
  json header;
  try {
    header = json::parse(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const json::exception& e) {
    throw CheckpointError(source + ": corrupt checkpoint header: " + e.what());
  }
  const std::size_t start = 16 + hlen;
  if (b.size() < start + 4) throw CheckpointError(source + ": truncated checkpoint payload");
  const std::size_t plen = b.size() - start - 4;

  Checkpoint c;
  try {
    c.model = header.at("model");
    c.optim = OptimSpec::from_json(header.at("optim"));
    c.optim_meta = header.at("optim").at("meta");
    c.epoch = header.at("epoch");
    c.rng_state = header.at("rng");
    c.history = detail::history_from_json(header.at("history"));
    std::size_t expect = 0;
    for (const auto& t : header.at("tensors")) {
      const Shape shape = t.at("shape").get<Shape>();
      const std::size_t offset = t.at("offset"), count = numel(shape);
      if (offset != expect || offset + 4 * count > plen)
        throw CheckpointError(source + ": truncated checkpoint payload");
      Tensor<float> v(shape);
      for (std::size_t i = 0; i < count; ++i)
        v[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(&b[start + offset + 4 * i]));
      expect = offset + 4 * count;
      c.tensors.emplace_back(t.at("name").get<std::string>(), std::move(v));
    }
    if (expect != plen) throw CheckpointError(source + ": payload length does not match header");
  } catch (const json::exception& e) {
    throw CheckpointError(source + ": malformed checkpoint header: " + e.what());
  }
  const auto stored = detail::get_le<std::uint32_t>(&b[start + plen]);
  const auto crc = static_cast<std::uint32_t>(crc32(0L, &b[start], static_cast<uInt>(plen)));
  if (stored != crc) throw CheckpointError(source + ": checksum mismatch");
  return c;
}

/// Writes via a temporary file and rename, so readers never see a partial file.
inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string tmp = path + ".tmp";
  write_file(tmp, checkpoint_bytes(c));
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path + ": " + ec.message());
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path), path);
}

// ---------------------------------------------------------------------------

template <class T>
Checkpoint snapshot(Trainer<T>& trainer) {
  Checkpoint c;
  c.model = trainer.model().spec();
  c.optim = trainer.spec();
  c.optim_meta = trainer.optimizer().meta();
  c.epoch = trainer.epoch();
  c.rng_state = trainer.rng().state();
  c.history = trainer.history();
  for (auto& p : trainer.model().parameters()) c.tensors.emplace_back("param:" + p.name, p.param->value.template cast<float>());
  for (auto& p : trainer.model().buffers()) c.tensors.emplace_back("buffer:" + p.name, p.param->value.template cast<float>());
  for (auto& [name, t] : trainer.optimizer().state()) c.tensors.emplace_back("optim:" + name, t->template cast<float>());
  return c;
}

namespace detail {

template <class T>
void copy_tensor(const Checkpoint& c, const std::string& name, Tensor<T>& dst) {
  const Tensor<float>* src = c.find(name);
  if (!src) throw CheckpointError("checkpoint lacks tensor " + name);
  if (src->shape() != dst.shape())
    throw CheckpointError("checkpoint tensor " + name + " has shape " + to_string(src->shape()) +
                          ", model expects " + to_string(dst.shape()));
  dst = src->template cast<T>();
}

}  // namespace detail

/// Rebuilds the model described by a checkpoint and loads its tensors.
template <class T>
Model<T> restore_model(const Checkpoint& c) {
  Rng scratch(0);
  Model<T> model = build_model<T>(c.model, scratch);
  for (auto& p : model.parameters()) detail::copy_tensor(c, "param:" + p.name, p.param->value);
  for (auto& p : model.buffers()) detail::copy_tensor(c, "buffer:" + p.name, p.param->value);
  return model;
}

/// Restores optimizer state and progress counters into a trainer built on a
/// model from restore_model().
template <class T>
void restore_trainer(const Checkpoint& c, Trainer<T>& trainer) {
  for (auto& [name, t] : trainer.optimizer().state()) detail::copy_tensor(c, "optim:" + name, *t);
  trainer.optimizer().set_meta(c.optim_meta);
  Rng rng;
  rng.set_state(c.rng_state);
  trainer.restore_progress(c.epoch, c.history, std::move(rng));
}

}  // namespace morphnet
