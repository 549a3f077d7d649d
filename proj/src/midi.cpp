#include "pianotree/midi.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <map>

#include "pianotree/segment.hpp"

namespace pianotree {
namespace {

constexpr int kWritePpq = 480;

struct RawNote {
  std::int64_t on_tick;
  std::int64_t off_tick;
  int pitch;
};

struct Cursor {
  std::span<const std::uint8_t> bytes;
  size_t pos = 0;

  bool eof() const { return pos >= bytes.size(); }
  std::uint8_t peek() const {
    if (eof()) throw DataError("midi: truncated file");
    return bytes[pos];
  }
  std::uint8_t u8() {
    std::uint8_t b = peek();
    ++pos;
    return b;
  }
  std::uint32_t u16() {
    std::uint32_t hi = u8();
    return (hi << 8) | u8();
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw DataError("midi: variable-length quantity longer than 4 bytes");
  }
  void skip(size_t n) {
    if (pos + n > bytes.size()) throw DataError("midi: truncated file");
    pos += n;
  }
};

struct TrackScan {
  std::vector<RawNote> notes;
  // (numerator, log2 denominator) of every time-signature event seen
  std::vector<std::pair<int, int>> meters;
  int dangling = 0;
};

TrackScan scan_track(Cursor trk) {
  TrackScan out;
  std::int64_t tick = 0;
  std::uint8_t status = 0;
  // open note-ons per (channel, pitch), FIFO so overlapped repeats pair up
  std::map<std::pair<int, int>, std::deque<std::int64_t>> open;

  auto close_note = [&](int ch, int pitch, std::int64_t off) {
    auto it = open.find({ch, pitch});
    if (it == open.end() || it->second.empty()) return;  // stray note-off
    out.notes.push_back({it->second.front(), off, pitch});
    it->second.pop_front();
  };

  while (!trk.eof()) {
    tick += trk.vlq();
    std::uint8_t b = trk.peek();
    if (b & 0x80) {
      status = trk.u8();
    } else if (status < 0x80) {
      throw DataError("midi: data byte without running status");
    }
    if (status == 0xff) {  // meta event
      std::uint8_t type = trk.u8();
      std::uint32_t len = trk.vlq();
      if (type == 0x58 && len >= 2) {
        int nn = trk.u8(), dd = trk.u8();
        trk.skip(len - 2);
        out.meters.emplace_back(nn, dd);
      } else {
        trk.skip(len);
        if (type == 0x2f) break;  // end of track
      }
    } else if (status == 0xf0 || status == 0xf7) {  // sysex
      trk.skip(trk.vlq());
    } else if (status >= 0xf1) {
      throw DataError("midi: unexpected system message in track");
    } else {
      int kind = status >> 4, ch = status & 0x0f;
      int d1 = trk.u8();
      int d2 = (kind == 0xc || kind == 0xd) ? 0 : trk.u8();
      if (kind == 0x9 && d2 > 0) {
        open[{ch, d1}].push_back(tick);
      } else if (kind == 0x8 || (kind == 0x9 && d2 == 0)) {
        close_note(ch, d1, tick);
      }
    }
  }
  for (auto& [key, onsets] : open) {
    // close anything left hanging at the end of the track
    out.dangling += static_cast<int>(onsets.size());
    for (std::int64_t on : onsets) out.notes.push_back({on, tick, key.second});
  }
  return out;
}

// nearest multiple of (ppq / steps_per_beat), ties rounding up
std::int64_t quantize(std::int64_t tick, std::int64_t ppq, int spb) {
  std::int64_t num = tick * spb;
  return (2 * num + ppq) / (2 * ppq);
}

void push_vlq(std::vector<std::uint8_t>& out, std::uint32_t v) {
  std::uint8_t buf[4];
  int n = 0;
  do {
    buf[n++] = static_cast<std::uint8_t>(v & 0x7f);
    v >>= 7;
  } while (v);
  while (n--) out.push_back(static_cast<std::uint8_t>(buf[n] | (n ? 0x80 : 0)));
}

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

}  // namespace

MidiIngest from_midi(std::span<const std::uint8_t> bytes, int steps_per_beat) {
  MidiIngest out;
  Cursor cur{bytes};
  if (bytes.size() < 14 || cur.u32() != 0x4d546864u || cur.u32() != 6)
    throw DataError("midi: missing MThd header");
  int format = static_cast<int>(cur.u16());
  int ntrks = static_cast<int>(cur.u16());
  int division = static_cast<int>(cur.u16());
  if (format != 0 && format != 1)
    throw DataError("midi: unsupported format " + std::to_string(format));
  if (division & 0x8000) throw DataError("midi: SMPTE time division unsupported");
  if (division == 0) throw DataError("midi: zero ticks per quarter");

  std::vector<RawNote> notes;
  std::vector<std::pair<int, int>> meters;
  int dangling = 0;
  for (int i = 0; i < ntrks; ++i) {
    // chunks other than MTrk are skipped per the SMF spec
    std::uint32_t magic = cur.u32();
    std::uint32_t len = cur.u32();
    if (cur.pos + len > bytes.size()) throw DataError("midi: truncated chunk");
    if (magic == 0x4d54726bu) {
      TrackScan scan = scan_track(Cursor{bytes.subspan(cur.pos, len)});
      notes.insert(notes.end(), scan.notes.begin(), scan.notes.end());
      meters.insert(meters.end(), scan.meters.begin(), scan.meters.end());
      dangling += scan.dangling;
    } else {
      --i;  // alien chunk, does not count toward ntrks
    }
    cur.skip(len);
  }
  if (dangling > 0)
    out.warnings.push_back("closed " + std::to_string(dangling) +
                           " dangling note-on(s) at end of track");

  if (meters.empty()) {
    out.warnings.push_back("meter: no time signature, file skipped");
    return out;
  }
  out.meter = std::to_string(meters[0].first) + "/" +
              std::to_string(1 << meters[0].second);
  for (auto [nn, dd] : meters) {
    if (!((nn == 4 && dd == 2) || (nn == 2 && dd == 2))) {
      out.warnings.push_back("meter: " + std::to_string(nn) + "/" +
                             std::to_string(1 << dd) + " not 2/4 or 4/4, file skipped");
      return out;
    }
  }
  out.meter_ok = true;
  if (notes.empty()) return out;

  const int seg_steps = 8 * steps_per_beat;
  std::int64_t last = 0;
  std::vector<std::array<std::int64_t, 3>> grid;  // (onset, duration, pitch)
  for (const RawNote& n : notes) {
    std::int64_t on = quantize(n.on_tick, division, steps_per_beat);
    std::int64_t off = quantize(n.off_tick, division, steps_per_beat);
    std::int64_t dur = std::max<std::int64_t>(1, off - on);
    grid.push_back({on, dur, n.pitch});
    last = std::max(last, on + dur);
  }
  int windows = static_cast<int>((last + seg_steps - 1) / seg_steps);
  out.segments.assign(windows, PolySegment(seg_steps));
  for (auto [on, dur, pitch] : grid) {
    int w = static_cast<int>(on / seg_steps);
    int t = static_cast<int>(on % seg_steps);
    out.segments[w].onsets[t].push_back(
        {static_cast<int>(pitch), static_cast<int>(dur)});
  }
  for (PolySegment& seg : out.segments) seg = canonicalize(seg);
  return out;
}

MidiIngest from_midi_file(const std::string& path, int steps_per_beat) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("midi: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return from_midi(bytes, steps_per_beat);
}

std::vector<std::uint8_t> to_midi(const PolySegment& seg, double tempo_bpm) {
  if (tempo_bpm <= 0) throw ConfigError("tempo must be positive");
  const int tick_per_step = kWritePpq / kStepsPerBeat;

  std::vector<std::uint8_t> trk;
  auto meta = [&](std::uint8_t type, std::initializer_list<std::uint8_t> data) {
    trk.push_back(0xff);
    trk.push_back(type);
    push_vlq(trk, static_cast<std::uint32_t>(data.size()));
    trk.insert(trk.end(), data);
  };
  push_vlq(trk, 0);
  meta(0x58, {4, 2, 24, 8});  // 4/4
  std::uint32_t uspq = static_cast<std::uint32_t>(std::lround(60.0e6 / tempo_bpm));
  push_vlq(trk, 0);
  meta(0x51, {static_cast<std::uint8_t>(uspq >> 16),
              static_cast<std::uint8_t>(uspq >> 8),
              static_cast<std::uint8_t>(uspq)});

  // the event stream already orders offs before ons and pads to segment end
  std::uint32_t delta = 0;
  for (const EventToken& tok : to_event_sequence(seg)) {
    if (tok.kind == EventToken::Kind::TimeShift) {
      delta += static_cast<std::uint32_t>(tok.value) * tick_per_step;
      continue;
    }
    push_vlq(trk, delta);
    delta = 0;
    bool on = tok.kind == EventToken::Kind::NoteOn;
    trk.push_back(on ? 0x90 : 0x80);
    trk.push_back(static_cast<std::uint8_t>(tok.value));
    trk.push_back(on ? 100 : 0);
  }
  push_vlq(trk, delta);
  meta(0x2f, {});

  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'M', 'T', 'h', 'd'});
  push_u32(out, 6);
  out.insert(out.end(), {0, 0, 0, 1});  // format 0, one track
  out.push_back(kWritePpq >> 8);
  out.push_back(kWritePpq & 0xff);
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  push_u32(out, static_cast<std::uint32_t>(trk.size()));
  out.insert(out.end(), trk.begin(), trk.end());
  return out;
}

void write_midi_file(const std::string& path, const PolySegment& seg,
                     double tempo_bpm) {
  std::vector<std::uint8_t> bytes = to_midi(seg, tempo_bpm);
  std::ofstream outf(path, std::ios::binary | std::ios::trunc);
  if (!outf) throw DataError("midi: cannot write " + path);
  outf.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
}

}  // namespace pianotree
