#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pianotree {

/// Time grid: one step is a semiquaver (1/4 beat); a segment is 8 beats.
inline constexpr int kStepsPerBeat = 4;
inline constexpr int kSegmentSteps = 32;
inline constexpr int kNumPitches = 128;
inline constexpr int kDurationBits = 5;

/// A single note: MIDI pitch in [0,127], duration in semiquaver steps in [1,T].
struct Note {
  int pitch = 0;
  int duration = 1;

  friend bool operator==(const Note&, const Note&) = default;
};

/// A polyphonic segment as a nested array: entry t lists the notes whose
/// onset is step t, sorted strictly ascending by pitch.
struct PolySegment {
  int num_steps = kSegmentSteps;
  std::vector<std::vector<Note>> onsets;

  PolySegment() : onsets(kSegmentSteps) {}
  explicit PolySegment(int steps) : num_steps(steps), onsets(steps) {}

  int note_count() const {
    int n = 0;
    for (const auto& o : onsets) n += static_cast<int>(o.size());
    return n;
  }
  bool empty() const { return note_count() == 0; }

  friend bool operator==(const PolySegment&, const PolySegment&) = default;
};

/// 5-digit binary duration code, most significant bit first; value = d - 1.
using DurationCode = std::array<std::uint8_t, kDurationBits>;

enum class ViolationRule {
  PitchRange,      // pitch outside [0,127]
  DurationRange,   // duration < 1
  DurationOverflow,// onset + duration > num_steps
  PitchOrder,      // onset list not strictly ascending (covers duplicates)
  StepCount,       // onsets array length != num_steps
};

struct Violation {
  int t = -1;
  int k = -1;
  ViolationRule rule;
};

std::string to_string(ViolationRule rule);

/// Piano-roll cell labels.
enum class Cell : std::uint8_t { Rest = 0, Onset = 1, Sustain = 2 };

/// T x 128 grid of onset/sustain/rest labels, row t = time step.
struct PianoRoll {
  int num_steps = kSegmentSteps;
  std::vector<Cell> grid;  // row-major, num_steps * 128

  explicit PianoRoll(int steps = kSegmentSteps)
      : num_steps(steps), grid(static_cast<size_t>(steps) * kNumPitches, Cell::Rest) {}

  Cell& at(int t, int pitch) { return grid[static_cast<size_t>(t) * kNumPitches + pitch]; }
  Cell at(int t, int pitch) const { return grid[static_cast<size_t>(t) * kNumPitches + pitch]; }
};

/// MIDI-like event token: note-on(0..127), note-off(0..127), time-shift(1..32).
struct EventToken {
  enum class Kind : std::uint8_t { NoteOn, NoteOff, TimeShift };
  Kind kind;
  int value;  // pitch for on/off, step count for time-shift

  static EventToken on(int pitch) { return {Kind::NoteOn, pitch}; }
  static EventToken off(int pitch) { return {Kind::NoteOff, pitch}; }
  static EventToken shift(int steps) { return {Kind::TimeShift, steps}; }

  friend bool operator==(const EventToken&, const EventToken&) = default;
};

using EventSequence = std::vector<EventToken>;

/// Why an event sequence failed to parse back into a segment.
struct IllegalSequence {
  enum class Kind { DanglingNoteOn, OrphanNoteOff, OverflowTime };
  int index;  // offending token position (end of sequence for dangling note-ons)
  Kind kind;
};

std::string to_string(IllegalSequence::Kind kind);

// Error categories map onto the CLI exit codes 1/2/3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace pianotree
