#pragma once

// Ingestion: per-camera message streams in, synchronized frame bundles out.
//
// The synchronizer is pure and data-driven — a bundle is cut as soon as
// every configured camera either has a queued message or has ended its
// stream. Cameras whose next message lies beyond the sync window join a
// later bundle instead (partial bundle, flagged). Live TCP ingestion and
// log replay both feed this one component, which is what makes
// live-vs-replay equivalence hold byte for byte.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include "vimat/protocol.hpp"

namespace vimat {

inline constexpr std::uint64_t kDefaultSyncWindowUs = 50000;  // 50 ms

struct FrameBundle {
  std::uint64_t bundle_time = 0;  // microseconds; min member timestamp
  std::map<std::string, DetectionMessage> per_camera;
  bool complete = false;  // every configured camera contributed

  bool operator==(const FrameBundle&) const = default;
};

struct IngestStats {
  std::size_t messages = 0;
  std::size_t late_dropped = 0;
  std::size_t order_violations = 0;
  std::size_t oversized_frames = 0;
  std::size_t partial_bundles = 0;
};

class Synchronizer {
 public:
  Synchronizer(std::vector<std::string> cameras, std::uint64_t window_us = kDefaultSyncWindowUs)
      : window_(window_us) {
    if (window_us == 0) throw ConfigError("sync window must be positive");
    for (auto& c : cameras) queues_[c];
    if (queues_.empty()) throw ConfigError("synchronizer needs at least one camera");
  }

  void push(DetectionMessage m) {
    auto it = queues_.find(m.camera_id);
    if (it == queues_.end()) return;  // unconfigured source: ignore
    ++stats_.messages;
    if (emitted_any_ && m.timestamp_us < last_bundle_time_) {
      ++stats_.late_dropped;
      return;
    }
    it->second.msgs.push_back(std::move(m));
  }

  void mark_closed(const std::string& camera) {
    auto it = queues_.find(camera);
    if (it != queues_.end()) it->second.closed = true;
  }

  void close_all() {
    for (auto& [id, q] : queues_) q.closed = true;
  }

  // Emits the next bundle if the data-driven cut rule allows one.
  std::optional<FrameBundle> poll() { return emit(false); }

  // Emits whatever is queued right now (deadline expiry in live mode).
  std::optional<FrameBundle> force_poll() { return emit(true); }

  bool drained() const {
    for (const auto& [id, q] : queues_)
      if (!q.closed || !q.msgs.empty()) return false;
    return true;
  }

  const IngestStats& stats() const { return stats_; }

 private:
  struct Queue {
    std::deque<DetectionMessage> msgs;
    bool closed = false;
  };

  std::optional<FrameBundle> emit(bool force) {
    std::uint64_t t0 = UINT64_MAX;
    for (const auto& [id, q] : queues_) {
      if (q.msgs.empty()) {
        if (!q.closed && !force) return std::nullopt;  // still waiting on this camera
        continue;
      }
      t0 = std::min(t0, q.msgs.front().timestamp_us);
    }
    if (t0 == UINT64_MAX) return std::nullopt;  // nothing queued anywhere

    FrameBundle b;
    b.bundle_time = t0;
    for (auto& [id, q] : queues_) {
      if (q.msgs.empty() || q.msgs.front().timestamp_us > t0 + window_) continue;
      b.per_camera.emplace(id, std::move(q.msgs.front()));
      q.msgs.pop_front();
    }
    b.complete = b.per_camera.size() == queues_.size();
    if (!b.complete) ++stats_.partial_bundles;
    emitted_any_ = true;
    last_bundle_time_ = t0;
    return b;
  }

  std::map<std::string, Queue> queues_;
  std::uint64_t window_;
  std::uint64_t last_bundle_time_ = 0;
  bool emitted_any_ = false;
  IngestStats stats_;
};

// ---------------------------------------------------------------------------
// Detection logs (.detlog)

class DetlogWriter {
 public:
  explicit DetlogWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw Error("cannot open detection log for writing: " + path);
  }

  void write(const DetectionMessage& m) {
    std::vector<std::uint8_t> rec;
    append_log_record(rec, m.camera_id, m);
    out_.write(reinterpret_cast<const char*>(rec.data()),
               static_cast<std::streamsize>(rec.size()));
    if (!out_) throw Error("write failure on detection log");
  }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
};

class DetlogReader {
 public:
  explicit DetlogReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw Error("cannot open detection log: " + path);
  }

  // Returns the next message, or nullopt at a clean end of file.
  std::optional<DetectionMessage> next() {
    std::size_t record_start = offset_;
    int tag_len = in_.get();
    if (tag_len == EOF) return std::nullopt;
    ++offset_;
    std::string tag(static_cast<std::size_t>(tag_len), '\0');
    if (!read_exact(tag.data(), tag.size(), record_start)) throw corrupt(record_start, "tag");

    std::uint8_t len_bytes[4];
    if (!read_exact(reinterpret_cast<char*>(len_bytes), 4, record_start))
      throw corrupt(record_start, "length prefix");
    std::uint32_t len = (std::uint32_t(len_bytes[0]) << 24) | (std::uint32_t(len_bytes[1]) << 16) |
                        (std::uint32_t(len_bytes[2]) << 8) | std::uint32_t(len_bytes[3]);
    if (len > kMaxBodyBytes) throw corrupt(record_start, "oversized body");
    std::vector<std::uint8_t> body(len);
    if (!read_exact(reinterpret_cast<char*>(body.data()), body.size(), record_start))
      throw corrupt(record_start, "body");
    try {
      DetectionMessage m = decode_body(body.data(), body.size());
      if (m.camera_id != tag) throw corrupt(record_start, "tag/camera mismatch");
      return m;
    } catch (const CorruptRecordError&) {
      throw;
    } catch (const Error& e) {
      throw corrupt(record_start, e.what());
    }
  }

 private:
  bool read_exact(char* dst, std::size_t n, std::size_t) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) return false;
    offset_ += n;
    return true;
  }
  CorruptRecordError corrupt(std::size_t off, const std::string& what) const {
    return CorruptRecordError(off, what + " (" + path_ + ")");
  }

  std::ifstream in_;
  std::string path_;
  std::size_t offset_ = 0;
};

// Streams a log through a synchronizer. speed 1 = recorded pacing,
// 0 = as fast as possible. The sink sees exactly the bundles a live run
// over the same bytes would produce.
inline IngestStats replay(const std::string& log_path, const std::vector<std::string>& cameras,
                          const std::function<void(const FrameBundle&)>& sink,
                          std::uint64_t window_us = kDefaultSyncWindowUs, double speed = 0.0) {
  DetlogReader reader(log_path);
  Synchronizer sync(cameras, window_us);
  std::optional<std::uint64_t> first_ts;
  auto wall_start = std::chrono::steady_clock::now();
  while (auto m = reader.next()) {
    if (speed > 0) {
      if (!first_ts) first_ts = m->timestamp_us;
      auto due = wall_start + std::chrono::microseconds(
                                  static_cast<std::uint64_t>((m->timestamp_us - *first_ts) / speed));
      std::this_thread::sleep_until(due);
    }
    sync.push(std::move(*m));
    while (auto b = sync.poll()) sink(*b);
  }
  sync.close_all();
  while (auto b = sync.poll()) sink(*b);
  return sync.stats();
}

// ---------------------------------------------------------------------------
// Live TCP ingestion

// One reader thread per accepted connection; all of them feed a shared
// Synchronizer. next_bundle() blocks until a bundle is ready or every
// configured camera has disconnected.
class DetectionServer {
 public:
  DetectionServer(const std::string& host, std::uint16_t port, std::vector<std::string> cameras,
                  std::uint64_t window_us = kDefaultSyncWindowUs)
      : cameras_(cameras), sync_(cameras, window_us) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
      throw ConfigError("invalid listen address: " + host);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw Error("bind() failed on " + host + ":" + std::to_string(port));
    if (::listen(listen_fd_, 8) != 0) throw Error("listen() failed");
    socklen_t alen = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &alen);
    port_ = ntohs(addr.sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~DetectionServer() { shutdown(); }

  std::uint16_t port() const { return port_; }

  // Blocks for the next bundle; nullopt once all cameras have closed and
  // the synchronizer is drained.
  std::optional<FrameBundle> next_bundle() {
    std::unique_lock lock(mu_);
    for (;;) {
      if (auto b = sync_.poll()) return b;
      if (closed_count_ >= cameras_.size() && sync_.drained()) return std::nullopt;
      if (stopping_) return std::nullopt;
      cv_.wait(lock);
    }
  }

  IngestStats stats() {
    std::unique_lock lock(mu_);
    IngestStats s = sync_.stats();
    s.order_violations = order_violations_;
    s.oversized_frames = oversized_;
    return s;
  }

  void shutdown() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) return;
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    {
      std::unique_lock lock(mu_);
      for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : readers_)
      if (t.joinable()) t.join();
    cv_.notify_all();
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) break;
      std::unique_lock lock(mu_);
      conn_fds_.push_back(fd);
      readers_.emplace_back([this, fd] { reader_loop(fd); });
    }
  }

  bool read_exact(int fd, std::uint8_t* dst, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      ssize_t r = ::read(fd, dst + got, n - got);
      if (r <= 0) return false;
      got += static_cast<std::size_t>(r);
    }
    return true;
  }

  void reader_loop(int fd) {
    std::string camera;
    std::uint64_t last_frame_index = 0;
    bool have_frame_index = false;
    for (;;) {
      std::uint8_t lenb[4];
      if (!read_exact(fd, lenb, 4)) break;
      std::uint32_t len = (std::uint32_t(lenb[0]) << 24) | (std::uint32_t(lenb[1]) << 16) |
                          (std::uint32_t(lenb[2]) << 8) | std::uint32_t(lenb[3]);
      if (len > kMaxBodyBytes) {
        // Oversized: discard the body, keep the connection at frame boundary.
        std::vector<std::uint8_t> sink(65536);
        std::size_t left = len;
        bool ok = true;
        while (left > 0 && ok) {
          std::size_t chunk = std::min(left, sink.size());
          ok = read_exact(fd, sink.data(), chunk);
          left -= chunk;
        }
        std::unique_lock lock(mu_);
        ++oversized_;
        if (!ok) break;
        continue;
      }
      std::vector<std::uint8_t> body(len);
      if (!read_exact(fd, body.data(), len)) break;
      DetectionMessage m;
      try {
        m = decode_body(body.data(), body.size());
      } catch (const Error&) {
        break;  // framing is lost; drop the connection
      }
      if (camera.empty()) camera = m.camera_id;
      std::unique_lock lock(mu_);
      if (m.camera_id != camera ||
          (have_frame_index && m.frame_index <= last_frame_index)) {
        ++order_violations_;
        continue;
      }
      last_frame_index = m.frame_index;
      have_frame_index = true;
      sync_.push(std::move(m));
      cv_.notify_all();
    }
    ::close(fd);
    std::unique_lock lock(mu_);
    if (!camera.empty()) {
      sync_.mark_closed(camera);
      ++closed_count_;
    }
    cv_.notify_all();
  }

  std::vector<std::string> cameras_;
  Synchronizer sync_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::thread accept_thread_;
  std::vector<std::thread> readers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<int> conn_fds_;
  std::size_t closed_count_ = 0;
  std::size_t oversized_ = 0;
  std::size_t order_violations_ = 0;
  std::atomic<bool> stopping_{false};
};

// Sends one camera's messages over TCP; the producer side of the protocol.
class DetectionClient {
 public:
  DetectionClient(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw Error("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
      throw ConfigError("invalid address: " + host);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw Error("connect() failed to " + host + ":" + std::to_string(port));
  }

  ~DetectionClient() { close(); }

  void send(const DetectionMessage& m) {
    auto frame = encode_message(m);
    std::size_t sent = 0;
    while (sent < frame.size()) {
      ssize_t w = ::write(fd_, frame.data() + sent, frame.size() - sent);
      if (w <= 0) throw Error("send failure");
      sent += static_cast<std::size_t>(w);
    }
  }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
};

}  // namespace vimat
