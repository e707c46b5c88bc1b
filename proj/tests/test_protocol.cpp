#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "vimat/ingest.hpp"

using namespace vimat;

namespace {

DetectionMessage random_message(std::mt19937_64& rng, std::size_t max_dets = 8) {
  std::uniform_real_distribution<float> f(-1e6f, 1e6f);
  std::uniform_real_distribution<float> pos(0.0f, 1e4f);
  static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz0123456789_-";
  DetectionMessage m;
  std::size_t idlen = rng() % (kMaxCameraIdBytes + 1);
  for (std::size_t i = 0; i < idlen; ++i) m.camera_id += alphabet[rng() % (sizeof alphabet - 1)];
  m.frame_index = rng();
  m.timestamp_us = rng();
  std::size_t ndet = rng() % (max_dets + 1);
  for (std::size_t i = 0; i < ndet; ++i) {
    Detection2D d;
    d.class_id = std::uint32_t(rng() % 1000);
    d.x = f(rng);
    d.y = f(rng);
    d.w = pos(rng);
    d.h = pos(rng);
    d.confidence = f(rng);
    std::size_t ns = rng() % 50;
    for (std::size_t j = 0; j < ns; ++j) d.depth_samples.push_back({pos(rng), pos(rng), f(rng)});
    m.detections.push_back(std::move(d));
  }
  return m;
}

DetectionMessage simple_message(const std::string& cam, std::uint64_t frame, std::uint64_t ts,
                                int ndets = 1) {
  DetectionMessage m;
  m.camera_id = cam;
  m.frame_index = frame;
  m.timestamp_us = ts;
  for (int i = 0; i < ndets; ++i) {
    Detection2D d;
    d.class_id = std::uint32_t(i);
    d.x = 10.0f * float(i);
    d.confidence = 0.5f;
    d.depth_samples = {{1.0f, 2.0f, 3.0f}};
    m.detections.push_back(d);
  }
  return m;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) {
    path = (std::filesystem::temp_directory_path() / name).string();
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("wire round-trip: default message and field-exact random messages") {
  DetectionMessage empty;
  auto [back, used] = decode_message(encode_message(empty));
  CHECK(back == empty);
  CHECK(used == encode_message(empty).size());

  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    DetectionMessage m = random_message(rng);
    auto bytes = encode_message(m);
    auto [d, consumed] = decode_message(bytes);
    CHECK(d == m);
    CHECK(consumed == bytes.size());
  }
}

TEST_CASE("decode ignores trailing bytes beyond the framed length") {
  DetectionMessage m = simple_message("cam0", 3, 999);
  auto bytes = encode_message(m);
  std::size_t framed = bytes.size();
  bytes.push_back(0xAB);
  bytes.push_back(0xCD);
  auto [d, consumed] = decode_message(bytes);
  CHECK(d == m);
  CHECK(consumed == framed);
}

TEST_CASE("encode guards: camera id cap and body size cap") {
  DetectionMessage m;
  m.camera_id = std::string(33, 'x');
  CHECK_THROWS_AS(encode_body(m), Error);
  m.camera_id = std::string(32, 'x');
  CHECK_NOTHROW(encode_body(m));

  // one detection with enough samples to burst the 16 MiB cap
  DetectionMessage big;
  big.camera_id = "cam0";
  Detection2D d;
  d.depth_samples.resize((kMaxBodyBytes / 12) + 1);
  big.detections.push_back(std::move(d));
  CHECK_THROWS_AS(encode_body(big), LengthOverflowError);
}

TEST_CASE("decode rejects: oversized frame, bad version, truncation, trailing junk") {
  std::vector<std::uint8_t> huge;
  wire::put_u32(huge, std::uint32_t(kMaxBodyBytes + 1));
  CHECK_THROWS_AS(decode_message(huge), LengthOverflowError);

  DetectionMessage m = simple_message("cam0", 1, 2);
  auto body = encode_body(m);

  auto tampered = body;
  tampered[0] = 2;  // future version
  CHECK_THROWS_AS(decode_body(tampered.data(), tampered.size()), VersionMismatchError);

  for (std::size_t cut : {std::size_t(1), body.size() / 2, body.size() - 1})
    CHECK_THROWS_AS(decode_body(body.data(), cut), TruncatedFrameError);

  auto padded = body;
  padded.push_back(0);
  CHECK_THROWS_AS(decode_body(padded.data(), padded.size()), TruncatedFrameError);

  // camera-id length beyond the cap
  std::vector<std::uint8_t> bad_id;
  wire::put_u8(bad_id, kProtocolVersion);
  wire::put_u8(bad_id, 200);
  bad_id.resize(bad_id.size() + 250, 'x');
  CHECK_THROWS_AS(decode_body(bad_id.data(), bad_id.size()), TruncatedFrameError);
}

TEST_CASE("detlog: write then read back the identical message sequence") {
  TempFile log("vimat_test_roundtrip.detlog");
  std::mt19937_64 rng(7);
  std::vector<DetectionMessage> wrote;
  {
    DetlogWriter w(log.path);
    for (int i = 0; i < 200; ++i) {
      wrote.push_back(random_message(rng, 4));
      w.write(wrote.back());
    }
  }
  DetlogReader r(log.path);
  std::vector<DetectionMessage> read;
  while (auto m = r.next()) read.push_back(std::move(*m));
  CHECK(read == wrote);
}

TEST_CASE("detlog: corruption reports the offset of the bad record") {
  TempFile log("vimat_test_corrupt.detlog");
  DetectionMessage a = simple_message("cam0", 0, 100, 2);
  DetectionMessage b = simple_message("cam1", 1, 200, 1);
  std::vector<std::uint8_t> bytes;
  append_log_record(bytes, a.camera_id, a);
  std::size_t second_record = bytes.size();
  append_log_record(bytes, b.camera_id, b);

  auto write_file = [&](const std::vector<std::uint8_t>& content) {
    std::ofstream out(log.path, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(content.data()),
              std::streamsize(content.size()));
  };

  // truncate mid-record: first record reads fine, second reports its start
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + second_record + 9);
  write_file(cut);
  {
    DetlogReader r(log.path);
    CHECK(r.next().has_value());
    try {
      r.next();
      FAIL("expected CorruptRecordError");
    } catch (const CorruptRecordError& e) {
      CHECK(e.byte_offset == second_record);
    }
  }

  // tamper the version byte inside the second record's frame
  auto tampered = bytes;
  std::size_t version_at = second_record + 1 + b.camera_id.size() + 4;
  tampered[version_at] = 9;
  write_file(tampered);
  {
    DetlogReader r(log.path);
    CHECK(r.next().has_value());
    try {
      r.next();
      FAIL("expected CorruptRecordError");
    } catch (const CorruptRecordError& e) {
      CHECK(e.byte_offset == second_record);
    }
  }

  // tag that disagrees with the embedded camera id
  std::vector<std::uint8_t> mismatch;
  append_log_record(mismatch, "cam9", a);
  write_file(mismatch);
  DetlogReader r(log.path);
  CHECK_THROWS_AS(r.next(), CorruptRecordError);
}

TEST_CASE("synchronizer: aligned timestamps cut one complete bundle per frame") {
  Synchronizer sync({"a", "b", "c"}, 50000);
  CHECK(!sync.poll().has_value());
  for (std::uint64_t f = 0; f < 3; ++f) {
    sync.push(simple_message("a", f, 1000 + f * 33333));
    sync.push(simple_message("b", f, 1000 + f * 33333));
    CHECK(!sync.poll().has_value());  // still waiting on c
    sync.push(simple_message("c", f, 1000 + f * 33333));
    auto bundle = sync.poll();
    REQUIRE(bundle.has_value());
    CHECK(bundle->complete);
    CHECK(bundle->bundle_time == 1000 + f * 33333);
    CHECK(bundle->per_camera.size() == 3);
    CHECK(bundle->per_camera.at("a").frame_index == f);
    CHECK(!sync.poll().has_value());
  }
  CHECK(sync.stats().messages == 9);
  CHECK(sync.stats().partial_bundles == 0);
}

TEST_CASE("synchronizer: skew within the window still joins one bundle") {
  Synchronizer sync({"a", "b"}, 50000);
  sync.push(simple_message("a", 0, 100000));
  sync.push(simple_message("b", 0, 125000));  // half a window later
  auto b = sync.poll();
  REQUIRE(b.has_value());
  CHECK(b->complete);
  CHECK(b->bundle_time == 100000);
  CHECK(b->per_camera.size() == 2);
}

TEST_CASE("synchronizer: a camera beyond the window waits for the next bundle") {
  Synchronizer sync({"a", "b"}, 50000);
  sync.push(simple_message("a", 0, 100000));
  sync.push(simple_message("b", 5, 700000));  // way ahead
  auto first = sync.poll();
  REQUIRE(first.has_value());
  CHECK(!first->complete);
  CHECK(first->per_camera.size() == 1);
  CHECK(first->per_camera.count("a") == 1);

  CHECK(!sync.poll().has_value());  // a's queue empty and open
  sync.mark_closed("a");
  auto second = sync.poll();
  REQUIRE(second.has_value());
  CHECK(second->bundle_time == 700000);
  CHECK(second->per_camera.count("b") == 1);
  CHECK(!second->complete);
  CHECK(sync.stats().partial_bundles == 2);
  CHECK(!sync.drained());  // b is still open
  sync.mark_closed("b");
  CHECK(sync.drained());
}

TEST_CASE("synchronizer: silent camera holds bundles until closed; force_poll overrides") {
  Synchronizer sync({"a", "b"}, 50000);
  sync.push(simple_message("a", 0, 1000));
  CHECK(!sync.poll().has_value());

  SUBCASE("closing the silent camera releases the bundle") {
    sync.mark_closed("b");
    auto b = sync.poll();
    REQUIRE(b.has_value());
    CHECK(!b->complete);
  }
  SUBCASE("force_poll emits whatever is queued") {
    auto b = sync.force_poll();
    REQUIRE(b.has_value());
    CHECK(!b->complete);
    CHECK(b->per_camera.count("a") == 1);
  }
}

TEST_CASE("synchronizer: late messages are dropped and counted, equal-time kept") {
  Synchronizer sync({"a", "b"}, 50000);
  sync.push(simple_message("a", 0, 100000));
  sync.push(simple_message("b", 0, 100000));
  REQUIRE(sync.poll().has_value());

  sync.push(simple_message("a", 1, 99999));  // behind the last bundle
  CHECK(sync.stats().late_dropped == 1);
  sync.push(simple_message("a", 1, 100000));  // exactly at it: allowed
  CHECK(sync.stats().late_dropped == 1);
  sync.push(simple_message("b", 1, 130000));
  auto b = sync.poll();
  REQUIRE(b.has_value());
  CHECK(b->per_camera.size() == 2);

  sync.push(simple_message("zz", 0, 500000));  // unconfigured: ignored
  CHECK(sync.stats().messages == 5);

  CHECK_THROWS_AS(Synchronizer({"a"}, 0), ConfigError);
  CHECK_THROWS_AS(Synchronizer({}, 1000), ConfigError);
}

TEST_CASE("property: bundle times never decrease, members stay within the window") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::string> cams = {"a", "b", "c"};
    std::uint64_t window = 20000 + rng() % 50000;
    Synchronizer sync(cams, window);

    // per-camera jittered 30 Hz streams, interleaved round-robin
    std::vector<FrameBundle> bundles;
    std::size_t pushed = 0;
    for (std::uint64_t f = 0; f < 40; ++f) {
      for (const auto& c : cams) {
        std::uint64_t ts = 1000000 + f * 33333 + rng() % 25000;
        sync.push(simple_message(c, f, ts));
        ++pushed;
        while (auto b = sync.poll()) bundles.push_back(*b);
      }
    }
    sync.close_all();
    while (auto b = sync.poll()) bundles.push_back(*b);

    std::uint64_t last = 0;
    std::size_t members = 0;
    for (const auto& b : bundles) {
      CHECK(b.bundle_time >= last);
      last = b.bundle_time;
      CHECK(b.per_camera.size() >= 1);
      CHECK(b.per_camera.size() <= cams.size());
      std::uint64_t lo = UINT64_MAX;
      for (const auto& [id, m] : b.per_camera) {
        lo = std::min(lo, m.timestamp_us);
        CHECK(m.timestamp_us >= b.bundle_time);
        CHECK(m.timestamp_us <= b.bundle_time + window);
      }
      CHECK(lo == b.bundle_time);
      members += b.per_camera.size();
    }
    CHECK(members + sync.stats().late_dropped == pushed);
    CHECK(sync.drained());
  }
}

TEST_CASE("replay produces exactly the bundles a direct synchronizer run produces") {
  TempFile log("vimat_test_replay.detlog");
  std::mt19937_64 rng(4);
  std::vector<std::string> cams = {"cam0", "cam1", "cam2"};
  std::vector<DetectionMessage> stream;
  for (std::uint64_t f = 0; f < 30; ++f)
    for (std::size_t c = 0; c < cams.size(); ++c)
      stream.push_back(
          simple_message(cams[c], f, 1000000 + f * 33333 + rng() % 20000, int(1 + f % 3)));

  {
    DetlogWriter w(log.path);
    for (const auto& m : stream) w.write(m);
  }

  std::vector<FrameBundle> direct;
  {
    Synchronizer sync(cams, 50000);
    for (const auto& m : stream) {
      sync.push(m);
      while (auto b = sync.poll()) direct.push_back(*b);
    }
    sync.close_all();
    while (auto b = sync.poll()) direct.push_back(*b);
  }

  std::vector<FrameBundle> replayed;
  IngestStats stats =
      replay(log.path, cams, [&](const FrameBundle& b) { replayed.push_back(b); }, 50000);
  CHECK(replayed == direct);
  CHECK(stats.messages == stream.size());
  CHECK(replayed.size() == 30);
  for (const auto& b : replayed) CHECK(b.complete);
}

TEST_CASE("live TCP ingestion matches replay of the same stream") {
  std::vector<std::string> cams = {"cam0", "cam1", "cam2"};
  std::vector<std::vector<DetectionMessage>> per_cam(cams.size());
  for (std::size_t c = 0; c < cams.size(); ++c)
    for (std::uint64_t f = 0; f < 50; ++f)
      per_cam[c].push_back(simple_message(cams[c], f, 1000000 + f * 33333, int(c + 1)));

  DetectionServer server("127.0.0.1", 0, cams);
  REQUIRE(server.port() != 0);

  std::vector<std::thread> senders;
  for (std::size_t c = 0; c < cams.size(); ++c)
    senders.emplace_back([&, c] {
      DetectionClient client("127.0.0.1", server.port());
      for (const auto& m : per_cam[c]) client.send(m);
    });

  std::vector<FrameBundle> live;
  while (auto b = server.next_bundle()) live.push_back(*b);
  for (auto& t : senders) t.join();
  server.shutdown();

  TempFile log("vimat_test_live.detlog");
  {
    DetlogWriter w(log.path);
    for (std::uint64_t f = 0; f < 50; ++f)
      for (std::size_t c = 0; c < cams.size(); ++c) w.write(per_cam[c][f]);
  }
  std::vector<FrameBundle> replayed;
  replay(log.path, cams, [&](const FrameBundle& b) { replayed.push_back(b); });

  CHECK(live == replayed);
  CHECK(live.size() == 50);
  for (const auto& b : live) CHECK(b.complete);
}

TEST_CASE("live server enforces per-connection camera and frame-index order") {
  DetectionServer server("127.0.0.1", 0, {"cam0"});
  {
    DetectionClient client("127.0.0.1", server.port());
    client.send(simple_message("cam0", 1, 1000));
    client.send(simple_message("cam0", 1, 2000));   // duplicate index: dropped
    client.send(simple_message("cam0", 0, 3000));   // regression: dropped
    client.send(simple_message("cam1", 2, 4000));   // wrong camera: dropped
    client.send(simple_message("cam0", 2, 5000));
  }
  std::vector<FrameBundle> bundles;
  while (auto b = server.next_bundle()) bundles.push_back(*b);
  REQUIRE(bundles.size() == 2);
  CHECK(bundles[0].per_camera.at("cam0").frame_index == 1);
  CHECK(bundles[1].per_camera.at("cam0").frame_index == 2);
  CHECK(server.stats().order_violations == 3);
  server.shutdown();
}

TEST_CASE("live server skips an oversized frame but keeps the connection") {
  DetectionServer server("127.0.0.1", 0, {"cam0"});

  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(server.port());
  ::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);

  auto send_all = [&](const std::vector<std::uint8_t>& bytes) {
    std::size_t sent = 0;
    while (sent < bytes.size()) {
      ssize_t w = ::write(fd, bytes.data() + sent, bytes.size() - sent);
      REQUIRE(w > 0);
      sent += std::size_t(w);
    }
  };

  std::vector<std::uint8_t> oversized;
  std::uint32_t huge = std::uint32_t(kMaxBodyBytes) + 64;
  wire::put_u32(oversized, huge);
  oversized.resize(oversized.size() + huge, 0);
  send_all(oversized);
  send_all(encode_message(simple_message("cam0", 7, 1234)));
  ::close(fd);

  std::vector<FrameBundle> bundles;
  while (auto b = server.next_bundle()) bundles.push_back(*b);
  REQUIRE(bundles.size() == 1);
  CHECK(bundles[0].per_camera.at("cam0").frame_index == 7);
  CHECK(server.stats().oversized_frames == 1);
  server.shutdown();
}
