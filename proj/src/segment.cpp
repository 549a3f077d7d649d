#include "pianotree/segment.hpp"

#include <algorithm>
#include <map>

namespace pianotree {

std::string to_string(ViolationRule rule) {
  switch (rule) {
    case ViolationRule::PitchRange: return "pitch_range";
    case ViolationRule::DurationRange: return "duration_range";
    case ViolationRule::DurationOverflow: return "duration_overflow";
    case ViolationRule::PitchOrder: return "pitch_order";
    case ViolationRule::StepCount: return "step_count";
  }
  return "unknown";
}

std::string to_string(IllegalSequence::Kind kind) {
  switch (kind) {
    case IllegalSequence::Kind::DanglingNoteOn: return "dangling-note-on";
    case IllegalSequence::Kind::OrphanNoteOff: return "orphan-note-off";
    case IllegalSequence::Kind::OverflowTime: return "overflow-time";
  }
  return "unknown";
}

DurationCode encode_duration(int duration) {
  if (duration < 1 || duration > kSegmentSteps)
    throw std::out_of_range("duration must be in [1," + std::to_string(kSegmentSteps) +
                            "], got " + std::to_string(duration));
  DurationCode code{};
  int v = duration - 1;
  for (int r = 0; r < kDurationBits; ++r)
    code[r] = static_cast<std::uint8_t>((v >> (kDurationBits - 1 - r)) & 1);
  return code;
}

int decode_duration(const DurationCode& code) {
  int v = 0;
  for (int r = 0; r < kDurationBits; ++r) {
    if (code[r] > 1)
      throw std::invalid_argument("duration code digit must be 0 or 1");
    v = (v << 1) | code[r];
  }
  return v + 1;
}

std::vector<Violation> validate(const PolySegment& seg) {
  std::vector<Violation> out;
  if (static_cast<int>(seg.onsets.size()) != seg.num_steps || seg.num_steps <= 0) {
    out.push_back({-1, -1, ViolationRule::StepCount});
    return out;
  }
  for (int t = 0; t < seg.num_steps; ++t) {
    const auto& list = seg.onsets[t];
    for (int k = 0; k < static_cast<int>(list.size()); ++k) {
      const Note& n = list[k];
      if (n.pitch < 0 || n.pitch >= kNumPitches)
        out.push_back({t, k, ViolationRule::PitchRange});
      if (n.duration < 1)
        out.push_back({t, k, ViolationRule::DurationRange});
      else if (t + n.duration > seg.num_steps)
        out.push_back({t, k, ViolationRule::DurationOverflow});
      if (k > 0 && list[k - 1].pitch >= n.pitch)
        out.push_back({t, k, ViolationRule::PitchOrder});
    }
  }
  return out;
}

bool is_valid(const PolySegment& seg) { return validate(seg).empty(); }

PolySegment transpose(const PolySegment& seg, int semitones) {
  PolySegment out(seg.num_steps);
  for (int t = 0; t < seg.num_steps; ++t) {
    for (const Note& n : seg.onsets[t]) {
      int p = n.pitch + semitones;
      if (p >= 0 && p < kNumPitches) out.onsets[t].push_back({p, n.duration});
    }
  }
  return out;
}

PolySegment canonicalize(const PolySegment& seg) {
  PolySegment out(seg.num_steps);
  for (int t = 0; t < seg.num_steps; ++t) {
    std::map<int, int> by_pitch;  // pitch -> longest duration
    for (const Note& n : seg.onsets[t]) {
      int d = std::clamp(n.duration, 1, seg.num_steps - t);
      auto [it, inserted] = by_pitch.emplace(n.pitch, d);
      if (!inserted) it->second = std::max(it->second, d);
    }
    for (auto [p, d] : by_pitch) out.onsets[t].push_back({p, d});
  }
  return out;
}

PolySegment clip_same_pitch_overlaps(const PolySegment& seg) {
  PolySegment out = seg;
  // next_onset[p] scanned backwards gives the nearest later onset per pitch
  std::array<int, kNumPitches> next_onset;
  next_onset.fill(-1);
  for (int t = seg.num_steps - 1; t >= 0; --t) {
    for (auto& n : out.onsets[t]) {
      if (next_onset[n.pitch] >= 0)
        n.duration = std::min(n.duration, next_onset[n.pitch] - t);
      next_onset[n.pitch] = t;
    }
  }
  return out;
}

PianoRoll to_pianoroll(const PolySegment& seg) {
  PianoRoll roll(seg.num_steps);
  for (int t = 0; t < seg.num_steps; ++t) {
    for (const Note& n : seg.onsets[t]) {
      roll.at(t, n.pitch) = Cell::Onset;
      int end = std::min(t + n.duration, seg.num_steps);
      for (int s = t + 1; s < end; ++s)
        if (roll.at(s, n.pitch) != Cell::Onset) roll.at(s, n.pitch) = Cell::Sustain;
    }
  }
  // a later onset of the same pitch cuts the earlier sustain run
  for (int p = 0; p < kNumPitches; ++p) {
    bool sounding = false;
    for (int t = 0; t < seg.num_steps; ++t) {
      Cell c = roll.at(t, p);
      if (c == Cell::Onset) sounding = true;
      else if (c == Cell::Sustain && !sounding) roll.at(t, p) = Cell::Rest;
      else if (c == Cell::Rest) sounding = false;
    }
  }
  return roll;
}

PolySegment from_pianoroll(const PianoRoll& roll) {
  PolySegment seg(roll.num_steps);
  for (int p = 0; p < kNumPitches; ++p) {
    for (int t = 0; t < roll.num_steps; ++t) {
      if (roll.at(t, p) != Cell::Onset) continue;
      int end = t + 1;
      while (end < roll.num_steps && roll.at(end, p) == Cell::Sustain) ++end;
      seg.onsets[t].push_back({p, end - t});
    }
  }
  for (auto& list : seg.onsets)
    std::sort(list.begin(), list.end(),
              [](const Note& a, const Note& b) { return a.pitch < b.pitch; });
  return seg;
}

EventSequence to_event_sequence(const PolySegment& seg) {
  const PolySegment clipped = clip_same_pitch_overlaps(seg);
  // offs[t] / ons[t]: pitches turning off / on at step t
  std::vector<std::vector<int>> ons(clipped.num_steps + 1), offs(clipped.num_steps + 1);
  for (int t = 0; t < clipped.num_steps; ++t) {
    for (const Note& n : clipped.onsets[t]) {
      ons[t].push_back(n.pitch);
      offs[std::min(t + n.duration, clipped.num_steps)].push_back(n.pitch);
    }
  }
  EventSequence out;
  int cursor = 0;
  for (int t = 0; t <= clipped.num_steps; ++t) {
    if (offs[t].empty() && ons[t].empty()) continue;
    if (t > cursor) {
      out.push_back(EventToken::shift(t - cursor));
      cursor = t;
    }
    std::sort(offs[t].begin(), offs[t].end());
    std::sort(ons[t].begin(), ons[t].end());
    for (int p : offs[t]) out.push_back(EventToken::off(p));
    for (int p : ons[t]) out.push_back(EventToken::on(p));
  }
  if (cursor < clipped.num_steps)
    out.push_back(EventToken::shift(clipped.num_steps - cursor));
  return out;
}

std::variant<PolySegment, IllegalSequence> from_event_sequence(
    const EventSequence& tokens, int num_steps) {
  PolySegment seg(num_steps);
  // sounding[p]: onset step of the currently sounding note, or -1
  std::array<int, kNumPitches> sounding;
  sounding.fill(-1);
  std::array<int, kNumPitches> on_index{};  // token index of the open note-on

  int now = 0;
  auto close = [&](int pitch, int at) {
    int onset = sounding[pitch];
    seg.onsets[onset].push_back({pitch, at - onset});
    sounding[pitch] = -1;
  };

  for (int i = 0; i < static_cast<int>(tokens.size()); ++i) {
    const EventToken& tok = tokens[i];
    switch (tok.kind) {
      case EventToken::Kind::NoteOn:
        if (tok.value < 0 || tok.value >= kNumPitches)
          return IllegalSequence{i, IllegalSequence::Kind::DanglingNoteOn};
        if (now >= num_steps)
          return IllegalSequence{i, IllegalSequence::Kind::OverflowTime};
        if (sounding[tok.value] >= 0) close(tok.value, now);  // re-onset truncates
        sounding[tok.value] = now;
        on_index[tok.value] = i;
        break;
      case EventToken::Kind::NoteOff:
        if (tok.value < 0 || tok.value >= kNumPitches || sounding[tok.value] < 0)
          return IllegalSequence{i, IllegalSequence::Kind::OrphanNoteOff};
        close(tok.value, now);
        break;
      case EventToken::Kind::TimeShift:
        if (tok.value < 1 || now + tok.value > num_steps)
          return IllegalSequence{i, IllegalSequence::Kind::OverflowTime};
        now += tok.value;
        break;
    }
  }
  for (int p = 0; p < kNumPitches; ++p)
    if (sounding[p] >= 0)
      return IllegalSequence{on_index[p], IllegalSequence::Kind::DanglingNoteOn};

  // Zero-length notes (immediate off, same-step re-onset) and same-step
  // duplicates are representable in token form but not in the nested array;
  // canonicalize resolves them the same way MIDI ingestion does.
  return canonicalize(seg);
}

}  // namespace pianotree
