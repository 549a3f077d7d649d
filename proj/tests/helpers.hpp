#pragma once

// Synthetic data shared by the test binaries.

#include <vector>

#include "pianotree/dataset.hpp"
#include "pianotree/model.hpp"
#include "pianotree/nn.hpp"
#include "pianotree/segment.hpp"
#include "pianotree/types.hpp"

namespace ptest {

using namespace pianotree;

/// Random valid segment: chords of 1..max_chord notes on ~note_prob of the
/// steps, durations clipped to the boundary.
inline PolySegment random_segment(nn::Rng& rng, int num_steps = kSegmentSteps,
                                  double note_prob = 0.6, int max_chord = 3) {
  PolySegment seg(num_steps);
  for (int t = 0; t < num_steps; ++t) {
    if (rng.uniform() >= note_prob) continue;
    const int k = 1 + static_cast<int>(rng.bits() % static_cast<unsigned>(max_chord));
    for (int j = 0; j < k; ++j) {
      const int pitch = 28 + static_cast<int>(rng.bits() % 72);
      const int max_d = std::min(10, num_steps - t);
      const int dur = 1 + static_cast<int>(rng.bits() % static_cast<unsigned>(max_d));
      seg.onsets[t].push_back({pitch, dur});
    }
  }
  return canonicalize(seg);
}

/// Deterministic 64-segment corpus of simple tonal patterns: four pattern
/// families (scale up, scale down, arpeggio, held dyads) over 16 roots.
/// Low-entropy by design so a model can overfit it quickly.
inline std::vector<PolySegment> desk_corpus() {
  static const int kScale[8] = {0, 2, 4, 5, 7, 9, 11, 12};
  std::vector<PolySegment> out;
  for (int family = 0; family < 4; ++family) {
    for (int v = 0; v < 16; ++v) {
      const int root = 48 + v;
      PolySegment seg;
      switch (family) {
        case 0:  // ascending quarter-note scale
          for (int i = 0; i < 8; ++i)
            seg.onsets[4 * i].push_back({root + kScale[i], 4});
          break;
        case 1:  // descending
          for (int i = 0; i < 8; ++i)
            seg.onsets[4 * i].push_back({root + kScale[7 - i], 4});
          break;
        case 2:  // broken triad, up twice
          for (int i = 0; i < 8; ++i) {
            static const int kArp[4] = {0, 4, 7, 12};
            seg.onsets[4 * i].push_back({root + kArp[i % 4], 4});
          }
          break;
        default:  // two held dyads
          seg.onsets[0].push_back({root, 16});
          seg.onsets[0].push_back({root + 7, 16});
          seg.onsets[16].push_back({root + 4, 16});
          seg.onsets[16].push_back({root + 12, 16});
          break;
      }
      out.push_back(canonicalize(seg));
    }
  }
  return out;
}

inline std::vector<SegmentRecord> to_records(const std::vector<PolySegment>& segs) {
  std::vector<SegmentRecord> recs;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    SegmentRecord r;
    r.id = "desk:" + std::to_string(i);
    r.song = "desk" + std::to_string(i);
    r.seg = segs[i];
    recs.push_back(std::move(r));
  }
  return recs;
}

}  // namespace ptest
