#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <tuple>
#include <vector>

#include "helpers.hpp"
#include "pianotree/midi.hpp"
#include "pianotree/segment.hpp"

using namespace pianotree;

namespace {

// Hand-rolled SMF writer, independent of the library's, used as the oracle.
struct MidiBuilder {
  int ppq = 480;
  int num = 4, den_pow2 = 2;
  bool meter = true;
  // (tick, status byte, data1, data2)
  std::vector<std::tuple<std::int64_t, std::uint8_t, std::uint8_t, std::uint8_t>> events;

  void note(std::int64_t on_tick, std::int64_t off_tick, int pitch, int vel = 90) {
    events.push_back({on_tick, 0x90, static_cast<std::uint8_t>(pitch),
                      static_cast<std::uint8_t>(vel)});
    events.push_back({off_tick, 0x80, static_cast<std::uint8_t>(pitch), 0});
  }

  std::vector<std::uint8_t> bytes() const {
    std::vector<std::uint8_t> track;
    auto vlq = [&track](std::int64_t v) {
      std::uint8_t buf[5];
      int n = 0;
      do {
        buf[n++] = static_cast<std::uint8_t>(v & 0x7f);
        v >>= 7;
      } while (v > 0);
      while (n > 1) track.push_back(buf[--n] | 0x80);
      track.push_back(buf[0]);
    };
    auto sorted = events;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) {
                       return std::get<0>(a) < std::get<0>(b);
                     });
    std::int64_t t = 0;
    if (meter) {
      vlq(0);
      for (std::uint8_t b : {0xff, 0x58, 0x04}) track.push_back(b);
      track.push_back(static_cast<std::uint8_t>(num));
      track.push_back(static_cast<std::uint8_t>(den_pow2));
      track.push_back(24);
      track.push_back(8);
    }
    vlq(0);  // tempo 120
    for (std::uint8_t b : {0xff, 0x51, 0x03, 0x07, 0xa1, 0x20}) track.push_back(b);
    for (const auto& [tick, status, d1, d2] : sorted) {
      vlq(tick - t);
      t = tick;
      track.push_back(status);
      track.push_back(d1);
      track.push_back(d2);
    }
    vlq(0);
    for (std::uint8_t b : {0xff, 0x2f, 0x00}) track.push_back(b);

    std::vector<std::uint8_t> out;
    auto u32 = [&out](std::uint32_t v) {
      for (int s = 24; s >= 0; s -= 8)
        out.push_back(static_cast<std::uint8_t>(v >> s));
    };
    auto u16 = [&out](std::uint16_t v) {
      out.push_back(static_cast<std::uint8_t>(v >> 8));
      out.push_back(static_cast<std::uint8_t>(v));
    };
    for (std::uint8_t b : {0x4d, 0x54, 0x68, 0x64}) out.push_back(b);
    u32(6);
    u16(0);
    u16(1);
    u16(static_cast<std::uint16_t>(ppq));
    for (std::uint8_t b : {0x4d, 0x54, 0x72, 0x6b}) out.push_back(b);
    u32(static_cast<std::uint32_t>(track.size()));
    out.insert(out.end(), track.begin(), track.end());
    return out;
  }
};

}  // namespace

TEST_CASE("one C4 quarter note at beat 0") {
  MidiBuilder b;
  b.note(0, 480, 60);
  auto ing = from_midi(b.bytes());
  CHECK(ing.meter_ok);
  CHECK(ing.meter == "4/4");
  REQUIRE(ing.segments.size() == 1);
  const PolySegment& seg = ing.segments[0];
  REQUIRE(seg.onsets[0].size() == 1);
  CHECK(seg.onsets[0][0] == Note{60, 4});
  for (int t = 1; t < seg.num_steps; ++t) CHECK(seg.onsets[t].empty());
}

TEST_CASE("empty track yields no segments") {
  MidiBuilder b;
  auto ing = from_midi(b.bytes());
  CHECK(ing.meter_ok);
  CHECK(ing.segments.empty());
}

TEST_CASE("non 4/4 or 2/4 meters are filtered") {
  MidiBuilder b;
  b.num = 3;
  b.note(0, 480, 60);
  auto ing = from_midi(b.bytes());
  CHECK_FALSE(ing.meter_ok);
  CHECK(ing.segments.empty());
  REQUIRE_FALSE(ing.warnings.empty());
  CHECK(ing.warnings[0].find("meter") != std::string::npos);

  MidiBuilder two;
  two.num = 2;
  two.note(0, 480, 60);
  CHECK(from_midi(two.bytes()).meter_ok);

  MidiBuilder none;
  none.meter = false;
  none.note(0, 480, 60);
  auto skipped = from_midi(none.bytes());
  CHECK_FALSE(skipped.meter_ok);
  CHECK(skipped.segments.empty());
}

TEST_CASE("quantization snaps to nearest semiquaver, ties up") {
  MidiBuilder b;  // 120 ticks per step at ppq 480
  b.note(130, 370, 60);   // 1.08 -> 1, 3.08 -> 3: duration 2
  b.note(60, 100, 72);    // tie 0.5 -> 1, 0.83 -> 1: zero length -> 1
  auto ing = from_midi(b.bytes());
  REQUIRE(ing.segments.size() == 1);
  const PolySegment& seg = ing.segments[0];
  REQUIRE(seg.onsets[1].size() == 2);
  CHECK(seg.onsets[1][0] == Note{60, 2});
  CHECK(seg.onsets[1][1] == Note{72, 1});
}

TEST_CASE("long pieces are cut at 8-beat downbeats") {
  MidiBuilder b;
  b.note(0, 480, 60);          // segment 0, step 0
  b.note(8 * 480, 9 * 480, 64);  // beat 8 = segment 1, step 0
  b.note(11 * 480, 12 * 480, 67);  // beat 11 = segment 1, step 12
  auto ing = from_midi(b.bytes());
  REQUIRE(ing.segments.size() == 2);
  CHECK(ing.segments[0].onsets[0][0] == Note{60, 4});
  CHECK(ing.segments[1].onsets[0][0] == Note{64, 4});
  CHECK(ing.segments[1].onsets[12][0] == Note{67, 4});
}

TEST_CASE("notes crossing a segment boundary are clipped") {
  MidiBuilder b;
  b.note(7 * 480, 9 * 480, 60);  // two beats starting at beat 7
  auto ing = from_midi(b.bytes());
  // the sustain reaches into a second window, which stays empty: the note
  // belongs to its onset window and is clipped at that window's edge
  REQUIRE(ing.segments.size() == 2);
  CHECK(ing.segments[0].onsets[28][0] == Note{60, 4});
  CHECK(ing.segments[1].empty());
}

TEST_CASE("same-onset duplicates keep the longer duration") {
  MidiBuilder b;
  b.note(0, 480, 60);
  b.note(0, 960, 60);
  auto ing = from_midi(b.bytes());
  REQUIRE(ing.segments.size() == 1);
  REQUIRE(ing.segments[0].onsets[0].size() == 1);
  CHECK(ing.segments[0].onsets[0][0] == Note{60, 8});
}

TEST_CASE("unparseable bytes throw") {
  std::vector<std::uint8_t> junk = {1, 2, 3, 4, 5};
  CHECK_THROWS_AS(from_midi(junk), DataError);
}

TEST_CASE("dangling note-on is closed with a warning") {
  MidiBuilder b;
  b.note(0, 480, 60);
  b.events.push_back({0, 0x90, 64, 90});  // no matching off
  auto ing = from_midi(b.bytes());
  bool warned = false;
  for (const auto& w : ing.warnings)
    if (w.find("dangling") != std::string::npos) warned = true;
  CHECK(warned);
}

TEST_CASE("to_midi of the empty segment has no note events") {
  auto bytes = to_midi(PolySegment());
  auto ing = from_midi(bytes);
  CHECK(ing.meter_ok);
  CHECK(ing.segments.empty());
}

TEST_CASE("midi round trip on random valid segments") {
  nn::Rng rng(51);
  for (int i = 0; i < 150; ++i) {
    auto s = clip_same_pitch_overlaps(ptest::random_segment(rng));
    if (s.empty()) continue;
    auto ing = from_midi(to_midi(s));
    REQUIRE(ing.segments.size() == 1);
    CHECK(ing.segments[0] == s);
  }
}

TEST_CASE("running status and format-1 multi-track parse") {
  // raw bytes with running status: on(60) on(64) sharing one status byte
  std::vector<std::uint8_t> track = {
      0x00, 0xff, 0x58, 0x04, 0x04, 0x02, 0x18, 0x08,  // 4/4
      0x00, 0x90, 60, 90,
      0x00, 64, 90,                                      // running status
      0x81, 0x70, 0x80, 60, 0,                           // delta 240
      0x00, 64, 0,
      0x00, 0xff, 0x2f, 0x00};
  std::vector<std::uint8_t> file = {0x4d, 0x54, 0x68, 0x64, 0, 0, 0, 6,
                                    0, 1, 0, 2, 0x01, 0xe0};
  // second, empty track
  std::vector<std::uint8_t> track2 = {0x00, 0xff, 0x2f, 0x00};
  auto append_track = [&file](const std::vector<std::uint8_t>& t) {
    for (std::uint8_t b : {0x4d, 0x54, 0x72, 0x6b}) file.push_back(b);
    for (int s = 24; s >= 0; s -= 8)
      file.push_back(static_cast<std::uint8_t>(t.size() >> s));
    file.insert(file.end(), t.begin(), t.end());
  };
  append_track(track);
  append_track(track2);

  auto ing = from_midi(file);
  REQUIRE(ing.segments.size() == 1);
  REQUIRE(ing.segments[0].onsets[0].size() == 2);
  CHECK(ing.segments[0].onsets[0][0] == Note{60, 2});
  CHECK(ing.segments[0].onsets[0][1] == Note{64, 2});
}
