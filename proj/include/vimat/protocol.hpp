#pragma once

// Wire format for detection messages.
//
// A frame is a u32 big-endian body length followed by the body:
//
//   u8  version            (currently 1)
//   u8  camera-id length   (<= 32)
//   ..  camera-id bytes
//   u64 frame_index
//   u64 timestamp (microseconds since epoch)
//   u32 detection count
//   per detection:
//     u32 class_id
//     f32 x, y, w, h       (bbox, pixels)
//     f32 confidence
//     u32 sample count
//     per sample: f32 u, f32 v, f32 depth
//
// All integers big-endian, floats IEEE-754 binary32 in big-endian byte
// order. Bodies are capped at 16 MiB. decode(encode(m)) == m, field-exact.
//
// Log files (".detlog") are a concatenation of records, each a
// u8-length-prefixed camera tag followed by one full wire frame.

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "vimat/fusion.hpp"

namespace vimat {

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kMaxBodyBytes = 16 * 1024 * 1024;
inline constexpr std::size_t kMaxCameraIdBytes = 32;

struct TruncatedFrameError : Error {
  TruncatedFrameError() : Error("truncated frame") {}
};

struct VersionMismatchError : Error {
  explicit VersionMismatchError(unsigned got)
      : Error("protocol version mismatch: got " + std::to_string(got) + ", expected " +
              std::to_string(kProtocolVersion)) {}
};

struct LengthOverflowError : Error {
  explicit LengthOverflowError(std::size_t len)
      : Error("frame body of " + std::to_string(len) + " bytes exceeds the 16 MiB cap") {}
};

struct CorruptRecordError : Error {
  explicit CorruptRecordError(std::size_t offset, const std::string& what)
      : Error("corrupt record at byte " + std::to_string(offset) + ": " + what),
        byte_offset(offset) {}
  std::size_t byte_offset;
};

struct DetectionMessage {
  std::uint8_t version = kProtocolVersion;
  std::string camera_id;
  std::uint64_t frame_index = 0;
  std::uint64_t timestamp_us = 0;
  std::vector<Detection2D> detections;

  bool operator==(const DetectionMessage&) const = default;
};

namespace wire {

inline void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
  put_u32(out, static_cast<std::uint32_t>(v));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

// Bounds-checked big-endian reads over a byte span.
class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = (std::uint32_t(data_[pos_]) << 24) | (std::uint32_t(data_[pos_ + 1]) << 16) |
                      (std::uint32_t(data_[pos_ + 2]) << 8) | std::uint32_t(data_[pos_ + 3]);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t hi = u32();
    return (hi << 32) | u32();
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw TruncatedFrameError();
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

}  // namespace wire

inline std::vector<std::uint8_t> encode_body(const DetectionMessage& m) {
  if (m.camera_id.size() > kMaxCameraIdBytes)
    throw Error("camera id exceeds " + std::to_string(kMaxCameraIdBytes) + " bytes");
  std::vector<std::uint8_t> b;
  wire::put_u8(b, m.version);
  wire::put_u8(b, static_cast<std::uint8_t>(m.camera_id.size()));
  b.insert(b.end(), m.camera_id.begin(), m.camera_id.end());
  wire::put_u64(b, m.frame_index);
  wire::put_u64(b, m.timestamp_us);
  wire::put_u32(b, static_cast<std::uint32_t>(m.detections.size()));
  for (const auto& d : m.detections) {
    wire::put_u32(b, d.class_id);
    wire::put_f32(b, d.x);
    wire::put_f32(b, d.y);
    wire::put_f32(b, d.w);
    wire::put_f32(b, d.h);
    wire::put_f32(b, d.confidence);
    wire::put_u32(b, static_cast<std::uint32_t>(d.depth_samples.size()));
    for (const auto& s : d.depth_samples) {
      wire::put_f32(b, s.u);
      wire::put_f32(b, s.v);
      wire::put_f32(b, s.depth);
    }
  }
  if (b.size() > kMaxBodyBytes) throw LengthOverflowError(b.size());
  return b;
}

inline std::vector<std::uint8_t> encode_message(const DetectionMessage& m) {
  std::vector<std::uint8_t> body = encode_body(m);
  std::vector<std::uint8_t> out;
  out.reserve(4 + body.size());
  wire::put_u32(out, static_cast<std::uint32_t>(body.size()));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

// Decodes exactly one body; trailing bytes are a framing error.
inline DetectionMessage decode_body(const std::uint8_t* data, std::size_t size) {
  wire::Reader r(data, size);
  DetectionMessage m;
  m.version = r.u8();
  if (m.version != kProtocolVersion) throw VersionMismatchError(m.version);
  std::uint8_t idlen = r.u8();
  if (idlen > kMaxCameraIdBytes) throw TruncatedFrameError();
  m.camera_id = r.bytes(idlen);
  m.frame_index = r.u64();
  m.timestamp_us = r.u64();
  std::uint32_t ndet = r.u32();
  m.detections.reserve(std::min<std::size_t>(ndet, 65536));
  for (std::uint32_t i = 0; i < ndet; ++i) {
    Detection2D d;
    d.class_id = r.u32();
    d.x = r.f32();
    d.y = r.f32();
    d.w = r.f32();
    d.h = r.f32();
    d.confidence = r.f32();
    std::uint32_t ns = r.u32();
    d.depth_samples.reserve(std::min<std::size_t>(ns, 1u << 20));
    for (std::uint32_t j = 0; j < ns; ++j) {
      DepthSample s;
      s.u = r.f32();
      s.v = r.f32();
      s.depth = r.f32();
      d.depth_samples.push_back(s);
    }
    m.detections.push_back(std::move(d));
  }
  if (r.remaining() != 0) throw TruncatedFrameError();
  return m;
}

// Decodes one length-prefixed frame; returns the message and bytes consumed.
inline std::pair<DetectionMessage, std::size_t> decode_message(const std::uint8_t* data,
                                                               std::size_t size) {
  wire::Reader r(data, size);
  std::uint32_t len = r.u32();
  if (len > kMaxBodyBytes) throw LengthOverflowError(len);
  if (size < 4 + std::size_t(len)) throw TruncatedFrameError();
  DetectionMessage m = decode_body(data + 4, len);
  return {std::move(m), 4 + std::size_t(len)};
}

inline std::pair<DetectionMessage, std::size_t> decode_message(
    const std::vector<std::uint8_t>& bytes) {
  return decode_message(bytes.data(), bytes.size());
}

// One .detlog record: u8 tag length, tag bytes, then a full wire frame.
inline void append_log_record(std::vector<std::uint8_t>& out, const std::string& tag,
                              const DetectionMessage& m) {
  if (tag.size() > 255) throw Error("log record tag exceeds 255 bytes");
  wire::put_u8(out, static_cast<std::uint8_t>(tag.size()));
  out.insert(out.end(), tag.begin(), tag.end());
  auto frame = encode_message(m);
  out.insert(out.end(), frame.begin(), frame.end());
}

}  // namespace vimat
