// Versioned binary checkpoints.
//
//   magic[5] | version u32 | payload_len u64 | payload | checksum u64
//   payload = config_digest u64 | config_len u64 | config JSON
//             | n_segments u32 | (name_len u32, name, rows u64, cols u64)*
//             | n_values u64 | values f64*
//
// Integers and reals are little-endian; checksum is FNV-1a 64 over every
// preceding byte.
#pragma once

#include "gpda/diffmath.hpp"

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gpda {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kGpdaMagic = "GPDA1";
inline constexpr std::string_view kMcdaMagic = "MCDA1";

class CheckpointError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};
class CheckpointFormatError : public CheckpointError {
  using CheckpointError::CheckpointError;
};
class CheckpointVersionError : public CheckpointError {
  using CheckpointError::CheckpointError;
};
class CheckpointTruncatedError : public CheckpointError {
  using CheckpointError::CheckpointError;
};
class CheckpointChecksumError : public CheckpointError {
  using CheckpointError::CheckpointError;
};

inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const { return buf_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(char((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::uint32_t u32() { return std::uint32_t(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointFormatError("checkpoint payload is inconsistent");
  }
  std::uint64_t get(int n) {
    need(std::size_t(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(data_[pos_ + std::size_t(i)])) << (8 * i);
    pos_ += std::size_t(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct CheckpointContents {
  std::string magic;
  nlohmann::json config;
  ParamVector params;
};

inline std::string encode_checkpoint(std::string_view magic, const nlohmann::json& config, const ParamVector& params) {
  const std::string cfg = config.dump();
  detail::ByteWriter payload;
  payload.u64(fnv1a(cfg));
  payload.u64(cfg.size());
  payload.bytes(cfg);
  payload.u32(std::uint32_t(params.segments().size()));
  for (const auto& s : params.segments()) {
    payload.u32(std::uint32_t(s.name.size()));
    payload.bytes(s.name);
    payload.u64(s.rows);
    payload.u64(s.cols);
  }
  payload.u64(params.size());
  for (double v : params.values()) payload.f64(v);

  detail::ByteWriter file;
  file.bytes(magic);
  file.u32(kCheckpointVersion);
  file.u64(payload.str().size());
  file.bytes(payload.str());
  file.u64(fnv1a(file.str()));
  return file.str();
}

inline CheckpointContents decode_checkpoint(std::string_view data, std::string_view expected_magic = {}) {
  constexpr std::size_t kHeader = 5 + 4 + 8;
  if (data.size() < kHeader) throw CheckpointTruncatedError("checkpoint is truncated (header)");
  detail::ByteReader head(data);
  const std::string magic(head.bytes(5));
  if (magic != kGpdaMagic && magic != kMcdaMagic) throw CheckpointFormatError("not a checkpoint (bad magic)");
  if (!expected_magic.empty() && magic != expected_magic)
    throw CheckpointFormatError("checkpoint holds a " + magic + " model, expected " + std::string(expected_magic));
  const std::uint32_t version = head.u32();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  const std::uint64_t payload_len = head.u64();
  if (data.size() - kHeader < 8 || payload_len > data.size() - kHeader - 8)
    throw CheckpointTruncatedError("checkpoint is truncated (payload)");
  if (data.size() != kHeader + payload_len + 8) throw CheckpointFormatError("trailing bytes after checkpoint");

  detail::ByteReader tail(data.substr(kHeader + payload_len));
  if (tail.u64() != fnv1a(data.substr(0, kHeader + payload_len)))
    throw CheckpointChecksumError("checkpoint checksum mismatch");

  detail::ByteReader in(data.substr(kHeader, payload_len));
  CheckpointContents out;
  out.magic = magic;
  const std::uint64_t digest = in.u64();
  const std::string cfg(in.bytes(in.u64()));
  if (fnv1a(cfg) != digest) throw CheckpointChecksumError("config digest mismatch");
  out.config = nlohmann::json::parse(cfg);
  const std::uint32_t n_seg = in.u32();
  for (std::uint32_t i = 0; i < n_seg; ++i) {
    std::string name(in.bytes(in.u32()));
    const auto rows = in.u64();
    const auto cols = in.u64();
    out.params.add_segment(std::move(name), rows, cols);
  }
  if (in.u64() != out.params.size()) throw CheckpointFormatError("value count does not match layout");
  for (auto& v : out.params.values()) v = in.f64();
  if (!in.done()) throw CheckpointFormatError("unexpected bytes after parameter values");
  return out;
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) throw std::runtime_error("error writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void save_checkpoint_file(const std::string& path, std::string_view magic, const nlohmann::json& config,
                                 const ParamVector& params) {
  write_file_atomic(path, encode_checkpoint(magic, config, params));
}

inline CheckpointContents load_checkpoint_file(const std::string& path, std::string_view expected_magic = {}) {
  return decode_checkpoint(read_file(path), expected_magic);
}

}  // namespace gpda
