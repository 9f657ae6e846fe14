#pragma once

// Checkpoint layout:
//
//   APRNET-CHECKPOINT 1
//   meta <key> <value>            (zero or more)
//   tensor <name> <h> <w> <c>     (one per tensor, in payload order)
//   end
//   <payload: float32 little-endian values, tensors back to back>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "aprnet/autodiff.hpp"

namespace aprnet {

inline constexpr const char* kCheckpointMagic = "APRNET-CHECKPOINT 1";

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<CheckpointEntry> tensors;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : tensors) {
      if (e.name == name) return &e;
    }
    return nullptr;
  }
};

namespace detail {

inline void put_f32_le(std::ostream& os, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(b, 4);
}

inline float get_f32_le(const unsigned char* b) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace detail

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  os << kCheckpointMagic << "\n";
  for (const auto& [k, v] : ck.meta) os << "meta " << k << " " << v << "\n";
  for (const auto& e : ck.tensors) {
    if (e.name.find_first_of(" \t\n") != std::string::npos) {
      throw IoError("checkpoint tensor names may not contain whitespace: " + e.name);
    }
    os << "tensor " << e.name << " " << e.shape.h << " " << e.shape.w << " " << e.shape.c << "\n";
  }
  os << "end\n";
  for (const auto& e : ck.tensors) {
    for (float v : e.values) detail::put_f32_le(os, v);
  }
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointMagic) {
    throw IoError(path.string() + ": not a checkpoint (bad header)");
  }
  Checkpoint ck;
  bool ended = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "end") {
      ended = true;
      break;
    }
    if (tag == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ck.meta[key] = value;
    } else if (tag == "tensor") {
      CheckpointEntry e;
      if (!(ls >> e.name >> e.shape.h >> e.shape.w >> e.shape.c)) {
        throw IoError(path.string() + ": malformed tensor line '" + line + "'");
      }
      ck.tensors.push_back(std::move(e));
    } else {
      throw IoError(path.string() + ": unexpected header line '" + line + "'");
    }
  }
  if (!ended) throw IoError(path.string() + ": truncated header");
  for (auto& e : ck.tensors) {
    const std::size_t n = e.shape.numel();
    std::vector<unsigned char> raw(n * 4);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(is.gcount()) != raw.size()) {
      throw IoError(path.string() + ": truncated payload at " + e.name);
    }
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) e.values[i] = detail::get_f32_le(raw.data() + 4 * i);
  }
  return ck;
}

template <class T>
Checkpoint make_checkpoint(const ParamList<T>& params, std::map<std::string, std::string> meta = {}) {
  Checkpoint ck;
  ck.meta = std::move(meta);
  for (const auto* p : params) {
    CheckpointEntry e;
    e.name = p->name;
    e.shape = p->value.shape();
    e.values.reserve(p->value.size());
    for (auto v : p->value.storage()) e.values.push_back(static_cast<float>(v));
    ck.tensors.push_back(std::move(e));
  }
  return ck;
}

/// Copies every named parameter from the checkpoint. Missing names or shape
/// mismatches are errors; extra checkpoint entries are ignored.
template <class T>
void load_parameters(const Checkpoint& ck, const ParamList<T>& params) {
  std::unordered_map<std::string, const CheckpointEntry*> index;
  for (const auto& e : ck.tensors) index[e.name] = &e;
  for (auto* p : params) {
    auto it = index.find(p->name);
    if (it == index.end()) throw IoError("checkpoint has no tensor '" + p->name + "'");
    if (it->second->shape != p->value.shape()) {
      throw ShapeError("checkpoint tensor '" + p->name + "' is " + to_string(it->second->shape) +
                       ", model expects " + to_string(p->value.shape()));
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->value[i] = static_cast<T>(it->second->values[i]);
    }
  }
}

}  // namespace aprnet
