#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "longscape/params.hpp"

namespace longscape {

// On-disk layout (all integers little-endian):
//   8 magic bytes "LONGSCPT", u32 version,
//   u64 config fingerprint, u32 config text length, config text,
//   u64 global_step, epoch, step_in_epoch, gen_iter, critic_steps,
//   u32 entry count, then per entry:
//     u32 name length, name bytes, u8 dtype size (4|8), u32 rank,
//     i64 dims[rank], u64 byte length, raw values.
inline constexpr char kCheckpointMagic[8] = {'L', 'O', 'N', 'G', 'S', 'C', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  uint8_t dtype_size = 4;
  Shape shape;
  std::vector<uint8_t> bytes;
};

struct Checkpoint {
  uint64_t fingerprint = 0;
  std::string config_text;
  uint64_t global_step = 0;
  uint64_t epoch = 0;
  uint64_t step_in_epoch = 0;
  uint64_t gen_iter = 0;
  uint64_t critic_steps = 0;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry& entry(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return e;
    fail("checkpoint is missing entry '", name, "'");
  }
};

namespace ckpt_detail {

template <typename T>
void put(std::vector<uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

struct Reader {
  const uint8_t* p;
  size_t left;
  std::string origin;

  template <typename T>
  T take(const char* what) {
    check(left >= sizeof(T), "checkpoint '", origin, "': truncated entry while reading ", what);
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    left -= sizeof(T);
    return v;
  }

  void take_bytes(void* dst, size_t n, const char* what) {
    check(left >= n, "checkpoint '", origin, "': truncated entry while reading ", what);
    std::memcpy(dst, p, n);
    p += n;
    left -= n;
  }
};

}  // namespace ckpt_detail

template <typename T>
void add_store_entries(Checkpoint& c, const std::string& prefix, const ParamStore<T>& store) {
  for (const auto& name : store.names()) {
    const auto& e = store.entry(name);
    auto pack = [&](const std::string& suffix, const Tensor<T>& t) {
      CheckpointEntry ce;
      ce.name = prefix + "/" + name + suffix;
      ce.dtype_size = sizeof(T);
      ce.shape = t.shape();
      ce.bytes.resize(static_cast<size_t>(t.size()) * sizeof(T));
      std::memcpy(ce.bytes.data(), t.data(), ce.bytes.size());
      c.entries.push_back(std::move(ce));
    };
    pack("", e.value);
    pack("#m", e.m);
    pack("#v", e.v);
  }
}

template <typename T>
void load_store_entries(const Checkpoint& c, const std::string& prefix, ParamStore<T>& store) {
  for (const auto& name : store.names()) {
    auto& e = store.entry(name);
    auto unpack = [&](const std::string& suffix, Tensor<T>& t) {
      const auto& ce = c.entry(prefix + "/" + name + suffix);
      check(ce.dtype_size == sizeof(T), "checkpoint entry '", ce.name, "' holds ",
            ce.dtype_size * 8, "-bit floats, expected ", sizeof(T) * 8);
      check(ce.shape == t.shape(), "checkpoint entry '", ce.name, "' has shape ",
            shape_str(ce.shape), ", expected ", shape_str(t.shape()));
      std::memcpy(t.data(), ce.bytes.data(), ce.bytes.size());
    };
    unpack("", e.value);
    unpack("#m", e.m);
    unpack("#v", e.v);
  }
}

// Atomic: serialize to <path>.tmp then rename over the target.
inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::vector<uint8_t> out;
  out.insert(out.end(), kCheckpointMagic, kCheckpointMagic + 8);
  ckpt_detail::put(out, kCheckpointVersion);
  ckpt_detail::put(out, c.fingerprint);
  ckpt_detail::put(out, static_cast<uint32_t>(c.config_text.size()));
  out.insert(out.end(), c.config_text.begin(), c.config_text.end());
  ckpt_detail::put(out, c.global_step);
  ckpt_detail::put(out, c.epoch);
  ckpt_detail::put(out, c.step_in_epoch);
  ckpt_detail::put(out, c.gen_iter);
  ckpt_detail::put(out, c.critic_steps);
  ckpt_detail::put(out, static_cast<uint32_t>(c.entries.size()));
  for (const auto& e : c.entries) {
    ckpt_detail::put(out, static_cast<uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    ckpt_detail::put(out, e.dtype_size);
    ckpt_detail::put(out, static_cast<uint32_t>(e.shape.size()));
    for (int64_t d : e.shape) ckpt_detail::put(out, d);
    ckpt_detail::put(out, static_cast<uint64_t>(e.bytes.size()));
    out.insert(out.end(), e.bytes.begin(), e.bytes.end());
  }

  const std::string tmp = path + ".tmp";
  {
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    check(f != nullptr, "cannot open '", tmp, "' for writing");
    const size_t written = std::fwrite(out.data(), 1, out.size(), f);
    const bool ok = written == out.size() && std::fflush(f) == 0;
    std::fclose(f);
    if (!ok) {
      std::remove(tmp.c_str());
      fail("failed to write checkpoint '", path, "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    fail("failed to move checkpoint into place at '", path, "': ", ec.message());
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  check(f != nullptr, "cannot open checkpoint '", path, "'");
  std::fseek(f, 0, SEEK_END);
  const long fsize = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> buf(static_cast<size_t>(fsize < 0 ? 0 : fsize));
  const size_t got = buf.empty() ? 0 : std::fread(buf.data(), 1, buf.size(), f);
  std::fclose(f);
  check(got == buf.size(), "failed to read checkpoint '", path, "'");

  ckpt_detail::Reader r{buf.data(), buf.size(), path};
  char magic[8];
  r.take_bytes(magic, 8, "magic bytes");
  check(std::memcmp(magic, kCheckpointMagic, 8) == 0, "checkpoint '", path,
        "': bad magic bytes, not a checkpoint file");
  const auto version = r.take<uint32_t>("version");
  check(version == kCheckpointVersion, "checkpoint '", path, "': unsupported version ", version,
        ", expected ", kCheckpointVersion);

  Checkpoint c;
  c.fingerprint = r.take<uint64_t>("fingerprint");
  const auto cfg_len = r.take<uint32_t>("config length");
  c.config_text.resize(cfg_len);
  if (cfg_len) r.take_bytes(c.config_text.data(), cfg_len, "config text");
  c.global_step = r.take<uint64_t>("global step");
  c.epoch = r.take<uint64_t>("epoch");
  c.step_in_epoch = r.take<uint64_t>("step in epoch");
  c.gen_iter = r.take<uint64_t>("generator iteration");
  c.critic_steps = r.take<uint64_t>("critic steps");
  const auto n = r.take<uint32_t>("entry count");
  c.entries.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    CheckpointEntry e;
    const auto name_len = r.take<uint32_t>("entry name length");
    check(name_len >= 1 && name_len <= 4096, "checkpoint '", path, "': implausible name length");
    e.name.resize(name_len);
    r.take_bytes(e.name.data(), name_len, "entry name");
    e.dtype_size = r.take<uint8_t>("entry dtype");
    check(e.dtype_size == 4 || e.dtype_size == 8, "checkpoint '", path,
          "': entry '", e.name, "' has unsupported dtype size ", int(e.dtype_size));
    const auto rank = r.take<uint32_t>("entry rank");
    check(rank >= 1 && rank <= 8, "checkpoint '", path, "': implausible rank for '", e.name, "'");
    int64_t count = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const auto extent = r.take<int64_t>("entry extent");
      check(extent >= 1 && extent <= (int64_t(1) << 32), "checkpoint '", path,
            "': implausible extent for '", e.name, "'");
      e.shape.push_back(extent);
      count *= extent;
    }
    const auto blen = r.take<uint64_t>("entry byte length");
    check(blen == static_cast<uint64_t>(count) * e.dtype_size, "checkpoint '", path,
          "': entry '", e.name, "' byte length does not match its shape");
    e.bytes.resize(static_cast<size_t>(blen));
    r.take_bytes(e.bytes.data(), e.bytes.size(), "entry values");
    c.entries.push_back(std::move(e));
  }
  return c;
}

}  // namespace longscape
