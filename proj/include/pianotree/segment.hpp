#pragma once

#include <variant>

#include "pianotree/types.hpp"

namespace pianotree {

/// Encode a duration d in [1,32] as 5 binary digits, MSB first (value d-1).
DurationCode encode_duration(int duration);

/// Inverse of encode_duration. Digits must be 0 or 1.
int decode_duration(const DurationCode& code);

/// All invariant violations of a segment; empty means well-formed.
std::vector<Violation> validate(const PolySegment& seg);

bool is_valid(const PolySegment& seg);

/// Shift every pitch by `semitones`; notes leaving [0,127] are dropped.
PolySegment transpose(const PolySegment& seg, int semitones);

/// Sort each onset by pitch, merge duplicate pitches keeping the longer
/// duration, clip durations to the segment boundary.
PolySegment canonicalize(const PolySegment& seg);

/// Truncate any note at the next onset of the same pitch, so that no two
/// copies of a pitch ever sound at once. Identity on overlap-free segments.
PolySegment clip_same_pitch_overlaps(const PolySegment& seg);

PianoRoll to_pianoroll(const PolySegment& seg);

/// Reconstruct the nested-array form from a piano roll. Exact inverse of
/// to_pianoroll whenever no same-pitch overlap was clipped.
PolySegment from_pianoroll(const PianoRoll& roll);

/// Serialize to note-on/note-off/time-shift tokens. Simultaneous events are
/// ordered note-off before note-on, each ascending by pitch; a final
/// time-shift pads the stream to the segment length.
EventSequence to_event_sequence(const PolySegment& seg);

/// Parse a token stream; returns the segment or the first illegality found.
/// A note-on for an already-sounding pitch truncates the sounding note.
std::variant<PolySegment, IllegalSequence> from_event_sequence(
    const EventSequence& tokens, int num_steps = kSegmentSteps);

}  // namespace pianotree
