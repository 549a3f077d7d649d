#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pianotree/types.hpp"

namespace pianotree {

/// Result of ingesting one MIDI file. `warnings` collects non-fatal reasons
/// why material was skipped (wrong or missing meter, dangling note-ons).
struct MidiIngest {
  std::vector<PolySegment> segments;
  std::vector<std::string> warnings;
  std::string meter;      // first time signature seen, e.g. "4/4"; empty if none
  bool meter_ok = false;  // true iff every signature in the file is 2/4 or 4/4
};

/// Parse a standard MIDI file (format 0 or 1), quantize to the semiquaver
/// grid (nearest tick, ties round up, zero-length notes get duration 1) and
/// cut into consecutive 8-beat segments starting at the first downbeat
/// (tick 0). Pieces whose time signatures are not all 2/4 or 4/4, or that
/// carry no time signature at all, yield zero segments plus a warning.
/// Throws DataError if the bytes are not a parseable MIDI file.
MidiIngest from_midi(std::span<const std::uint8_t> bytes,
                     int steps_per_beat = kStepsPerBeat);

MidiIngest from_midi_file(const std::string& path,
                          int steps_per_beat = kStepsPerBeat);

/// Render one segment as a single-track MIDI file (PPQ 480, 4/4 meter).
/// Same-pitch overlaps are truncated at the next onset, exactly as
/// to_event_sequence does; otherwise from_midi(to_midi(seg)) = [seg] for
/// any valid non-empty segment.
std::vector<std::uint8_t> to_midi(const PolySegment& seg,
                                  double tempo_bpm = 120.0);

void write_midi_file(const std::string& path, const PolySegment& seg,
                     double tempo_bpm = 120.0);

}  // namespace pianotree
