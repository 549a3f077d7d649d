#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "pianotree/model.hpp"

namespace pianotree {

// ----------------------------------------------- reconstruction metrics

struct Prf {
  double precision = 1, recall = 1, f1 = 0;
};

/// Onset matching: a predicted note matches iff a ground-truth note shares
/// (onset step, pitch); valid segments make this one-to-one.
struct MatchCounts {
  long matched = 0, pred = 0, gt = 0;
};

/// Sustain frames over matched notes only; overlap = min of the two extents.
struct FrameCounts {
  long overlap = 0, pred = 0, gt = 0;
};

MatchCounts onset_counts(const PolySegment& pred, const PolySegment& gt);
FrameCounts duration_counts(const PolySegment& pred, const PolySegment& gt);

// Empty-set conventions: precision over zero predictions is 1, recall over
// zero ground truth is 1, F1 of (0,0) is 0. Duration metrics with zero
// matched notes are vacuously (1,1,1); reports flag that case.
Prf prf_from(const MatchCounts& c);
Prf prf_from(const FrameCounts& c);
Prf onset_prf(const PolySegment& pred, const PolySegment& gt);
Prf duration_prf(const PolySegment& pred, const PolySegment& gt);

struct ReconReport {
  double onset_precision = 1, onset_recall = 1, onset_f1 = 0;
  double duration_precision = 1, duration_recall = 1, duration_f1 = 1;
  long segments = 0;
  long matched_notes = 0;  // duration metrics are vacuous when 0
};

enum class ReconMode { PosteriorMean, Sampled };

/// Encodes every segment, greedily decodes z (posterior mean, or one
/// reparameterized sample per segment under Sampled), and micro-averages the
/// match counts over the whole set.
ReconReport reconstruction_report(const Params<float>& p,
                                  const std::vector<const PolySegment*>& segs,
                                  ReconMode mode = ReconMode::PosteriorMean,
                                  std::uint64_t seed = 0);

nlohmann::json report_to_json(const ReconReport& r);
ReconReport report_from_json(const nlohmann::json& j);
std::string report_table(const ReconReport& r);

// ------------------------------------------------------- interpolation

/// Spherical linear interpolation along the great circle through a and b;
/// falls back to linear interpolation when the arc is numerically degenerate
/// (angle below 1e-6 or antipodal). Zero-length inputs are an error.
template <class S>
nn::Vec<S> slerp(const nn::Vec<S>& a, const nn::Vec<S>& b, double alpha);

extern template nn::Vec<float> slerp(const nn::Vec<float>&, const nn::Vec<float>&, double);
extern template nn::Vec<double> slerp(const nn::Vec<double>&, const nn::Vec<double>&, double);

/// Decodes slerp(mu_a, mu_b, i/(n_steps-1)) for i = 0..n_steps-1.
std::vector<PolySegment> interpolate(const Params<float>& p,
                                     const PolySegment& a, const PolySegment& b,
                                     int n_steps);

// ---------------------------------------------------- embedding exports

struct EmbeddingExport {
  std::vector<std::string> labels;    // one per row
  Eigen::MatrixXd vectors;            // rows x dims
  Eigen::MatrixXd projection;         // rows x 3
  Eigen::MatrixXd components;         // dims x 3, orthonormal columns
  Eigen::Vector3d explained_variance; // per component
};

/// Top-3 principal components of the centered rows; each component's sign is
/// fixed so its largest-magnitude coordinate is positive.
EmbeddingExport pca3(std::vector<std::string> labels, Eigen::MatrixXd vectors);

/// Every (pitch, duration) token embedding on an 84-pitch x 16-duration grid
/// (1344 rows), pitches lo..hi inclusive, durations 1..16 steps.
EmbeddingExport export_note_embedding_grid(const Params<float>& p,
                                           int lo_pitch = 24, int hi_pitch = 107);

struct ChordLabel {
  int root_pc = 0;       // 0 = C
  std::string quality;   // major, minor, diminished, augmented
};

/// All voicings of the chord within three octaves above the anchored root:
/// each chord tone independently takes any non-empty subset of its three
/// octave positions (7^3 = 343 voicings), every note one beat long.
std::vector<std::vector<Note>> chord_voicings(const ChordLabel& label,
                                              int anchor_midi = 48);

/// Simu-note summaries of every voicing of every listed chord, with labels
/// "<root>:<quality>:<index>".
EmbeddingExport export_chord_embeddings(const Params<float>& p,
                                        const std::vector<ChordLabel>& chords,
                                        int anchor_midi = 48);

/// "label,x,y,z" rows (label quoted if it contains a comma).
void write_embedding_csv(const std::string& path, const EmbeddingExport& e);
void write_embedding_metadata(const std::string& path, const EmbeddingExport& e,
                              const nlohmann::json& extra);

}  // namespace pianotree
