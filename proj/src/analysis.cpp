#include "pianotree/analysis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <utility>

#include "pianotree/batch.hpp"
#include "pianotree/segment.hpp"

namespace pianotree {

// ----------------------------------------------- reconstruction metrics

MatchCounts onset_counts(const PolySegment& pred, const PolySegment& gt) {
  if (pred.num_steps != gt.num_steps)
    throw PipelineError("metrics: step counts differ");
  MatchCounts c;
  for (int t = 0; t < gt.num_steps; ++t) {
    std::set<int> gp;
    for (const Note& n : gt.onsets[t]) gp.insert(n.pitch);
    c.gt += static_cast<long>(gt.onsets[t].size());
    c.pred += static_cast<long>(pred.onsets[t].size());
    for (const Note& n : pred.onsets[t])
      if (gp.count(n.pitch)) ++c.matched;
  }
  return c;
}

FrameCounts duration_counts(const PolySegment& pred, const PolySegment& gt) {
  if (pred.num_steps != gt.num_steps)
    throw PipelineError("metrics: step counts differ");
  FrameCounts c;
  for (int t = 0; t < gt.num_steps; ++t) {
    std::map<int, int> gp;  // pitch -> duration
    for (const Note& n : gt.onsets[t]) gp[n.pitch] = n.duration;
    for (const Note& n : pred.onsets[t]) {
      auto it = gp.find(n.pitch);
      if (it == gp.end()) continue;
      c.overlap += std::min(n.duration, it->second);
      c.pred += n.duration;
      c.gt += it->second;
    }
  }
  return c;
}

Prf prf_from(const MatchCounts& c) {
  Prf r;
  r.precision = c.pred > 0 ? static_cast<double>(c.matched) / c.pred : 1.0;
  r.recall = c.gt > 0 ? static_cast<double>(c.matched) / c.gt : 1.0;
  r.f1 = (r.precision + r.recall) > 0
             ? 2 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

Prf prf_from(const FrameCounts& c) {
  Prf r;
  if (c.pred == 0 && c.gt == 0) {  // no matched notes: vacuous truth
    r.precision = r.recall = r.f1 = 1.0;
    return r;
  }
  r.precision = c.pred > 0 ? static_cast<double>(c.overlap) / c.pred : 1.0;
  r.recall = c.gt > 0 ? static_cast<double>(c.overlap) / c.gt : 1.0;
  r.f1 = (r.precision + r.recall) > 0
             ? 2 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

Prf onset_prf(const PolySegment& pred, const PolySegment& gt) {
  return prf_from(onset_counts(pred, gt));
}

Prf duration_prf(const PolySegment& pred, const PolySegment& gt) {
  return prf_from(duration_counts(pred, gt));
}

ReconReport reconstruction_report(const Params<float>& p,
                                  const std::vector<const PolySegment*>& segs,
                                  ReconMode mode, std::uint64_t seed) {
  MatchCounts onsets;
  FrameCounts frames;
  constexpr std::size_t kChunk = 128;
  for (std::size_t base = 0; base < segs.size(); base += kChunk) {
    const std::size_t n = std::min(kChunk, segs.size() - base);
    std::vector<const PolySegment*> part(segs.begin() + base,
                                         segs.begin() + base + n);
    auto posts = batch_encode(p, part);
    nn::Mat<float> z(p.dims.d_z, static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      if (mode == ReconMode::Sampled) {
        nn::Rng rng(nn::derive_seed(seed, 0xe7a1u, base + i));
        nn::Vec<float> eps(p.dims.d_z);
        for (int j = 0; j < p.dims.d_z; ++j)
          eps(j) = static_cast<float>(rng.normal());
        z.col(static_cast<Eigen::Index>(i)) = sample_latent(posts[i], eps);
      } else {
        z.col(static_cast<Eigen::Index>(i)) = posts[i].mu;
      }
    }
    auto decoded = batch_decode(p, z);
    for (std::size_t i = 0; i < n; ++i) {
      MatchCounts mc = onset_counts(decoded[i], *part[i]);
      FrameCounts fc = duration_counts(decoded[i], *part[i]);
      onsets.matched += mc.matched;
      onsets.pred += mc.pred;
      onsets.gt += mc.gt;
      frames.overlap += fc.overlap;
      frames.pred += fc.pred;
      frames.gt += fc.gt;
    }
  }

  ReconReport rep;
  Prf po = prf_from(onsets), pd = prf_from(frames);
  rep.onset_precision = po.precision;
  rep.onset_recall = po.recall;
  rep.onset_f1 = po.f1;
  rep.duration_precision = pd.precision;
  rep.duration_recall = pd.recall;
  rep.duration_f1 = pd.f1;
  rep.segments = static_cast<long>(segs.size());
  rep.matched_notes = onsets.matched;
  return rep;
}

nlohmann::json report_to_json(const ReconReport& r) {
  return {{"onset", {{"precision", r.onset_precision},
                     {"recall", r.onset_recall},
                     {"f1", r.onset_f1}}},
          {"duration", {{"precision", r.duration_precision},
                        {"recall", r.duration_recall},
                        {"f1", r.duration_f1}}},
          {"segments", r.segments},
          {"matched_notes", r.matched_notes}};
}

ReconReport report_from_json(const nlohmann::json& j) {
  ReconReport r;
  r.onset_precision = j.at("onset").at("precision").get<double>();
  r.onset_recall = j.at("onset").at("recall").get<double>();
  r.onset_f1 = j.at("onset").at("f1").get<double>();
  r.duration_precision = j.at("duration").at("precision").get<double>();
  r.duration_recall = j.at("duration").at("recall").get<double>();
  r.duration_f1 = j.at("duration").at("f1").get<double>();
  r.segments = j.at("segments").get<long>();
  r.matched_notes = j.at("matched_notes").get<long>();
  return r;
}

std::string report_table(const ReconReport& r) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof(buf), "%-9s precision %.4f  recall %.4f  f1 %.4f\n",
                "onset", r.onset_precision, r.onset_recall, r.onset_f1);
  out += buf;
  std::snprintf(buf, sizeof(buf), "%-9s precision %.4f  recall %.4f  f1 %.4f\n",
                "duration", r.duration_precision, r.duration_recall,
                r.duration_f1);
  out += buf;
  std::snprintf(buf, sizeof(buf), "segments %ld, matched notes %ld\n",
                r.segments, r.matched_notes);
  out += buf;
  if (r.matched_notes == 0)
    out += "note: duration metrics are vacuous (no matched notes)\n";
  return out;
}

// ------------------------------------------------------- interpolation

template <class S>
nn::Vec<S> slerp(const nn::Vec<S>& a, const nn::Vec<S>& b, double alpha) {
  const double na = a.template cast<double>().norm();
  const double nb = b.template cast<double>().norm();
  if (na == 0 || nb == 0) throw DataError("slerp: zero-length input");
  double cosw = a.template cast<double>().dot(b.template cast<double>()) / (na * nb);
  cosw = std::clamp(cosw, -1.0, 1.0);
  const double omega = std::acos(cosw);
  const double sinw = std::sin(omega);
  if (omega < 1e-6 || sinw < 1e-9)
    return ((1.0 - alpha) * a.template cast<double>() +
            alpha * b.template cast<double>())
        .template cast<S>();
  const double wa = std::sin((1.0 - alpha) * omega) / sinw;
  const double wb = std::sin(alpha * omega) / sinw;
  return (wa * a.template cast<double>() + wb * b.template cast<double>())
      .template cast<S>();
}

template nn::Vec<float> slerp(const nn::Vec<float>&, const nn::Vec<float>&, double);
template nn::Vec<double> slerp(const nn::Vec<double>&, const nn::Vec<double>&, double);

std::vector<PolySegment> interpolate(const Params<float>& p,
                                     const PolySegment& a, const PolySegment& b,
                                     int n_steps) {
  if (n_steps < 2) throw ConfigError("interpolate: need at least 2 steps");
  const nn::Vec<float> za = encode(p, a).mu;
  const nn::Vec<float> zb = encode(p, b).mu;
  nn::Mat<float> z(p.dims.d_z, n_steps);
  for (int i = 0; i < n_steps; ++i) {
    const double alpha = static_cast<double>(i) / (n_steps - 1);
    z.col(i) = slerp(za, zb, alpha);
  }
  return batch_decode(p, z);
}

// ---------------------------------------------------- embedding exports

EmbeddingExport pca3(std::vector<std::string> labels, Eigen::MatrixXd vectors) {
  const Eigen::Index n = vectors.rows(), d = vectors.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n)
    throw PipelineError("pca: label/vector row mismatch");
  if (n < 3 || d < 3) throw PipelineError("pca: need at least 3 rows and 3 dims");

  EmbeddingExport e;
  e.labels = std::move(labels);
  e.vectors = std::move(vectors);

  Eigen::MatrixXd centered = e.vectors.rowwise() - e.vectors.colwise().mean();
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered,
                                     Eigen::ComputeThinU | Eigen::ComputeThinV);
  e.components = svd.matrixV().leftCols(3);
  for (int c = 0; c < 3; ++c) {
    Eigen::Index idx = 0;
    e.components.col(c).cwiseAbs().maxCoeff(&idx);
    if (e.components(idx, c) < 0) e.components.col(c) = -e.components.col(c);
  }
  e.projection = centered * e.components;
  for (int c = 0; c < 3; ++c) {
    const double s = svd.singularValues()(c);
    e.explained_variance(c) = s * s / static_cast<double>(n - 1);
  }
  return e;
}

EmbeddingExport export_note_embedding_grid(const Params<float>& p,
                                           int lo_pitch, int hi_pitch) {
  if (lo_pitch < 0 || hi_pitch >= kNumPitches || lo_pitch > hi_pitch)
    throw ConfigError("note grid: bad pitch range");
  std::vector<std::string> labels;
  const int rows = (hi_pitch - lo_pitch + 1) * 16;
  Eigen::MatrixXd vectors(rows, p.dims.e_n);
  int r = 0;
  for (int pitch = lo_pitch; pitch <= hi_pitch; ++pitch) {
    for (int dur = 1; dur <= 16; ++dur) {
      nn::Vec<float> v = embed_token(p.emb, note_token({pitch, dur}));
      vectors.row(r) = v.cast<double>().transpose();
      labels.push_back("p" + std::to_string(pitch) + ":d" + std::to_string(dur));
      ++r;
    }
  }
  return pca3(std::move(labels), std::move(vectors));
}

namespace {

const std::array<int, 3>& quality_intervals(const std::string& quality) {
  static const std::map<std::string, std::array<int, 3>> kQualities = {
      {"major", {0, 4, 7}},
      {"minor", {0, 3, 7}},
      {"diminished", {0, 3, 6}},
      {"augmented", {0, 4, 8}},
  };
  auto it = kQualities.find(quality);
  if (it == kQualities.end())
    throw ConfigError("chords: unknown quality '" + quality + "'");
  return it->second;
}

const char* kPcNames[12] = {"C",  "C#", "D",  "D#", "E",  "F",
                            "F#", "G",  "G#", "A",  "A#", "B"};

}  // namespace

std::vector<std::vector<Note>> chord_voicings(const ChordLabel& label,
                                              int anchor_midi) {
  const auto& ivs = quality_intervals(label.quality);
  if (label.root_pc < 0 || label.root_pc >= 12)
    throw ConfigError("chords: root pitch class out of range");
  const int root = anchor_midi + label.root_pc;
  if (root + ivs[2] + 24 >= kNumPitches || root < 0)
    throw ConfigError("chords: anchor leaves the MIDI range");

  // non-empty subsets of {0,12,24} per chord tone, low bit = low octave
  std::vector<std::vector<Note>> out;
  out.reserve(343);
  for (int s0 = 1; s0 < 8; ++s0)
    for (int s1 = 1; s1 < 8; ++s1)
      for (int s2 = 1; s2 < 8; ++s2) {
        std::vector<Note> notes;
        const int subsets[3] = {s0, s1, s2};
        for (int tone = 0; tone < 3; ++tone)
          for (int oct = 0; oct < 3; ++oct)
            if (subsets[tone] & (1 << oct))
              notes.push_back({root + ivs[tone] + 12 * oct, kStepsPerBeat});
        std::sort(notes.begin(), notes.end(), [](const Note& a, const Note& b) {
          return a.pitch < b.pitch;
        });
        out.push_back(std::move(notes));
      }
  return out;
}

EmbeddingExport export_chord_embeddings(const Params<float>& p,
                                        const std::vector<ChordLabel>& chords,
                                        int anchor_midi) {
  if (chords.empty()) throw ConfigError("chords: empty chord list");
  std::vector<std::string> labels;
  std::vector<nn::Vec<float>> vecs;
  for (const ChordLabel& c : chords) {
    const auto voicings = chord_voicings(c, anchor_midi);
    const std::string base =
        std::string(kPcNames[c.root_pc]) + ":" + c.quality + ":";
    for (std::size_t i = 0; i < voicings.size(); ++i) {
      vecs.push_back(embed_simu_note(p, voicings[i]));
      labels.push_back(base + std::to_string(i));
    }
  }
  Eigen::MatrixXd vectors(static_cast<Eigen::Index>(vecs.size()), p.dims.e_sn);
  for (std::size_t i = 0; i < vecs.size(); ++i)
    vectors.row(static_cast<Eigen::Index>(i)) =
        vecs[i].cast<double>().transpose();
  return pca3(std::move(labels), std::move(vectors));
}

void write_embedding_csv(const std::string& path, const EmbeddingExport& e) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw PipelineError("export: cannot write " + path);
  os << "label,x,y,z\n";
  char buf[128];
  for (Eigen::Index i = 0; i < e.projection.rows(); ++i) {
    std::string label = e.labels[static_cast<std::size_t>(i)];
    if (label.find(',') != std::string::npos) label = "\"" + label + "\"";
    std::snprintf(buf, sizeof(buf), ",%.9g,%.9g,%.9g\n", e.projection(i, 0),
                  e.projection(i, 1), e.projection(i, 2));
    os << label << buf;
  }
  if (!os) throw PipelineError("export: write failed for " + path);
}

void write_embedding_metadata(const std::string& path, const EmbeddingExport& e,
                              const nlohmann::json& extra) {
  nlohmann::json j = {
      {"rows", e.projection.rows()},
      {"dims", e.vectors.cols()},
      {"explained_variance",
       {e.explained_variance(0), e.explained_variance(1),
        e.explained_variance(2)}},
  };
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw PipelineError("export: cannot write " + path);
  os << j.dump(2) << "\n";
}

}  // namespace pianotree
