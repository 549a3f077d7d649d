#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <utility>
#include <vector>

#include "json.hpp"

#include "helpers.hpp"
#include "pianotree/analysis.hpp"
#include "pianotree/segment.hpp"

using namespace pianotree;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

PolySegment seg_of(const std::vector<std::tuple<int, int, int>>& notes,
                   int steps = kSegmentSteps) {
  PolySegment s(steps);
  for (auto [t, pitch, dur] : notes) s.onsets[t].push_back({pitch, dur});
  return canonicalize(s);
}

// independent metric oracle: set intersection over (step, pitch) pairs, and
// per-match frame totals with min-overlap
MatchCounts oracle_onsets(const PolySegment& pred, const PolySegment& gt) {
  std::set<std::pair<int, int>> a, b;
  for (int t = 0; t < pred.num_steps; ++t)
    for (const Note& n : pred.onsets[t]) a.insert({t, n.pitch});
  for (int t = 0; t < gt.num_steps; ++t)
    for (const Note& n : gt.onsets[t]) b.insert({t, n.pitch});
  MatchCounts c;
  c.pred = static_cast<long>(a.size());
  c.gt = static_cast<long>(b.size());
  for (const auto& key : a) c.matched += b.count(key);
  return c;
}

FrameCounts oracle_frames(const PolySegment& pred, const PolySegment& gt) {
  FrameCounts c;
  for (int t = 0; t < std::min(pred.num_steps, gt.num_steps); ++t)
    for (const Note& p : pred.onsets[t])
      for (const Note& g : gt.onsets[t])
        if (p.pitch == g.pitch) {
          c.overlap += std::min(p.duration, g.duration);
          c.pred += p.duration;
          c.gt += g.duration;
        }
  return c;
}

double harmonic(double p, double r) { return p + r == 0 ? 0 : 2 * p * r / (p + r); }

}  // namespace

TEST_CASE("onset and duration counts match a set-based oracle") {
  nn::Rng rng(401);
  for (int trial = 0; trial < 200; ++trial) {
    PolySegment pred = ptest::random_segment(rng, 8, 0.5, 2);
    PolySegment gt = ptest::random_segment(rng, 8, 0.5, 2);
    MatchCounts mo = oracle_onsets(pred, gt);
    MatchCounts mc = onset_counts(pred, gt);
    CHECK(mc.matched == mo.matched);
    CHECK(mc.pred == mo.pred);
    CHECK(mc.gt == mo.gt);
    FrameCounts fo = oracle_frames(pred, gt);
    FrameCounts fc = duration_counts(pred, gt);
    CHECK(fc.overlap == fo.overlap);
    CHECK(fc.pred == fo.pred);
    CHECK(fc.gt == fo.gt);

    Prf onset = onset_prf(pred, gt);
    CHECK(onset.precision ==
          doctest::Approx(mo.pred ? double(mo.matched) / mo.pred : 1.0));
    CHECK(onset.recall ==
          doctest::Approx(mo.gt ? double(mo.matched) / mo.gt : 1.0));
    CHECK(onset.f1 == doctest::Approx(harmonic(onset.precision, onset.recall)));
  }
}

TEST_CASE("metric hand examples") {
  // exact onset+pitch agreement, one extra prediction, one miss
  PolySegment pred = seg_of({{0, 60, 4}, {0, 64, 4}, {4, 67, 2}});
  PolySegment gt = seg_of({{0, 60, 2}, {4, 67, 2}, {4, 71, 1}});
  MatchCounts m = onset_counts(pred, gt);
  CHECK(m.matched == 2);
  CHECK(m.pred == 3);
  CHECK(m.gt == 3);
  Prf o = prf_from(m);
  CHECK(o.precision == doctest::Approx(2.0 / 3));
  CHECK(o.recall == doctest::Approx(2.0 / 3));
  CHECK(o.f1 == doctest::Approx(2.0 / 3));

  // matched notes only: 60@0 overlaps min(4,2)=2; 67@4 exact
  FrameCounts f = duration_counts(pred, gt);
  CHECK(f.overlap == 4);
  CHECK(f.pred == 6);
  CHECK(f.gt == 4);
  Prf d = prf_from(f);
  CHECK(d.precision == doctest::Approx(4.0 / 6));
  CHECK(d.recall == doctest::Approx(1.0));
  CHECK(d.f1 == doctest::Approx(harmonic(4.0 / 6, 1.0)));

  // a shifted onset is a miss even when the pitch sounds there as sustain
  PolySegment late = seg_of({{1, 60, 3}});
  CHECK(onset_counts(late, seg_of({{0, 60, 4}})).matched == 0);
}

TEST_CASE("empty-set conventions") {
  PolySegment silent;
  PolySegment notes = seg_of({{0, 60, 4}});

  Prf both = onset_prf(silent, silent);
  CHECK(both.precision == 1.0);
  CHECK(both.recall == 1.0);
  CHECK(both.f1 == 1.0);

  Prf no_pred = onset_prf(silent, notes);
  CHECK(no_pred.precision == 1.0);
  CHECK(no_pred.recall == 0.0);
  CHECK(no_pred.f1 == 0.0);

  Prf no_gt = onset_prf(notes, silent);
  CHECK(no_gt.precision == 0.0);
  CHECK(no_gt.recall == 1.0);
  CHECK(no_gt.f1 == 0.0);

  // f1 stays harmonic even at the (0,0) corner
  CHECK(prf_from(MatchCounts{0, 3, 0}).f1 == 0.0);

  // duration metrics with no matched notes are vacuously perfect
  Prf vac = duration_prf(notes, seg_of({{4, 72, 2}}));
  CHECK(vac.precision == 1.0);
  CHECK(vac.recall == 1.0);
  CHECK(vac.f1 == 1.0);
}

TEST_CASE("reconstruction report: deterministic, well-formed, serializable") {
  ModelDims dims = ModelDims::miniature();
  Params<float> p;
  p.init(dims, 71);

  auto segs = ptest::desk_corpus();
  std::vector<const PolySegment*> items;
  for (int i = 0; i < 6; ++i) items.push_back(&segs[i]);

  ReconReport r1 = reconstruction_report(p, items);
  ReconReport r2 = reconstruction_report(p, items);
  CHECK(r1.segments == 6);
  CHECK(r1.onset_precision == r2.onset_precision);
  CHECK(r1.onset_recall == r2.onset_recall);
  CHECK(r1.onset_f1 == r2.onset_f1);
  CHECK(r1.duration_f1 == r2.duration_f1);
  CHECK(r1.matched_notes == r2.matched_notes);
  for (double v : {r1.onset_precision, r1.onset_recall, r1.onset_f1,
                   r1.duration_precision, r1.duration_recall, r1.duration_f1}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  ReconReport s1 = reconstruction_report(p, items, ReconMode::Sampled, 9);
  ReconReport s2 = reconstruction_report(p, items, ReconMode::Sampled, 9);
  CHECK(s1.onset_f1 == s2.onset_f1);
  CHECK(s1.matched_notes == s2.matched_notes);

  ReconReport manual;
  manual.onset_precision = 0.25;
  manual.onset_recall = 0.5;
  manual.onset_f1 = 1.0 / 3;
  manual.duration_precision = 0.75;
  manual.duration_recall = 0.6;
  manual.duration_f1 = 2.0 / 3;
  manual.segments = 11;
  manual.matched_notes = 42;
  ReconReport back = report_from_json(report_to_json(manual));
  CHECK(back.onset_precision == manual.onset_precision);
  CHECK(back.onset_recall == manual.onset_recall);
  CHECK(back.onset_f1 == manual.onset_f1);
  CHECK(back.duration_precision == manual.duration_precision);
  CHECK(back.duration_recall == manual.duration_recall);
  CHECK(back.duration_f1 == manual.duration_f1);
  CHECK(back.segments == 11);
  CHECK(back.matched_notes == 42);

  CHECK(report_table(manual).find("vacuous") == std::string::npos);
  manual.matched_notes = 0;
  CHECK(report_table(manual).find("vacuous") != std::string::npos);
}

TEST_CASE("slerp identities at tight tolerance") {
  nn::Rng rng(431);
  const int d = 16;
  auto unit = [&] {
    nn::Vec<double> v(d);
    for (int i = 0; i < d; ++i) v[i] = rng.normal();
    return nn::Vec<double>(v / v.norm());
  };

  for (int trial = 0; trial < 50; ++trial) {
    nn::Vec<double> a = unit(), b = unit();
    CHECK((slerp(a, b, 0.0) - a).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((slerp(a, b, 1.0) - b).lpNorm<Eigen::Infinity>() < 1e-12);
    // the arc stays on the unit sphere
    for (double t : {0.25, 0.37, 0.5, 0.81})
      CHECK(std::abs(slerp(a, b, t).norm() - 1.0) < 1e-9);
  }

  // orthogonal unit vectors: the midpoint bisects the right angle
  nn::Vec<double> e1 = nn::Vec<double>::Zero(d), e2 = nn::Vec<double>::Zero(d);
  e1[0] = 1;
  e2[1] = 1;
  nn::Vec<double> mid = slerp(e1, e2, 0.5);
  CHECK((mid - (e1 + e2) / std::sqrt(2.0)).lpNorm<Eigen::Infinity>() < 1e-9);
  // and uniform parametrization sweeps the angle linearly
  nn::Vec<double> third = slerp(e1, e2, 1.0 / 3);
  CHECK(std::abs(third.dot(e1) - std::cos(M_PI / 6)) < 1e-9);

  // degenerate arcs fall back to straight-line interpolation
  nn::Vec<double> a = unit();
  CHECK((slerp(a, a, 0.5) - a).lpNorm<Eigen::Infinity>() < 1e-12);
  nn::Vec<double> twice = 2 * a;
  CHECK((slerp(a, twice, 0.5) - 1.5 * a).lpNorm<Eigen::Infinity>() < 1e-12);
  nn::Vec<double> anti = slerp(a, nn::Vec<double>(-a), 0.5);
  CHECK(anti.allFinite());

  nn::Vec<double> zero = nn::Vec<double>::Zero(d);
  CHECK_THROWS_AS(slerp(zero, a, 0.5), DataError);
  CHECK_THROWS_AS(slerp(a, zero, 0.5), DataError);

  // float instantiation agrees with the double path at float precision
  nn::Vec<float> fa = a.cast<float>(), fb = unit().cast<float>();
  nn::Vec<float> fm = slerp(fa, fb, 0.5);
  CHECK(std::abs(fm.norm() - 1.0f) < 1e-5f);
}

TEST_CASE("interpolation endpoints reproduce the plain reconstructions") {
  ModelDims dims = ModelDims::miniature();
  Params<float> p;
  p.init(dims, 73);
  auto segs = ptest::desk_corpus();

  CHECK_THROWS_AS(interpolate(p, segs[0], segs[1], 1), ConfigError);
  CHECK_THROWS_AS(interpolate(p, segs[0], segs[1], 0), ConfigError);

  auto two = interpolate(p, segs[0], segs[1], 2);
  REQUIRE(two.size() == 2);
  CHECK(two[0] == decode(p, encode(p, segs[0]).mu).seg);
  CHECK(two[1] == decode(p, encode(p, segs[1]).mu).seg);

  auto five = interpolate(p, segs[2], segs[3], 5);
  REQUIRE(five.size() == 5);
  for (const auto& s : five) CHECK(is_valid(s));
  auto again = interpolate(p, segs[2], segs[3], 5);
  CHECK(five == again);
}

TEST_CASE("pca recovers a planted 3-dimensional subspace") {
  nn::Rng rng(433);
  const int n = 40, d = 10;

  Eigen::MatrixXd raw(d, 3);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < 3; ++j) raw(i, j) = rng.normal();
  Eigen::MatrixXd basis =
      Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ() *
      Eigen::MatrixXd::Identity(d, 3);

  const double scales[3] = {5.0, 2.0, 0.5};
  Eigen::MatrixXd coeffs(n, 3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 3; ++j) coeffs(i, j) = scales[j] * rng.normal();
  Eigen::MatrixXd data = coeffs * basis.transpose();
  data.rowwise() += Eigen::RowVectorXd::Constant(d, 0.7);

  std::vector<std::string> labels;
  for (int i = 0; i < n; ++i) labels.push_back("row" + std::to_string(i));
  EmbeddingExport e = pca3(labels, data);

  REQUIRE(e.projection.rows() == n);
  REQUIRE(e.components.rows() == d);
  Eigen::Matrix3d gram = e.components.transpose() * e.components;
  CHECK((gram - Eigen::Matrix3d::Identity()).norm() < 1e-9);

  // all variance lives in the planted subspace, so 3 components reconstruct
  // the centered data exactly
  Eigen::MatrixXd centered = data.rowwise() - data.colwise().mean();
  Eigen::MatrixXd recon = e.projection * e.components.transpose();
  CHECK((centered - recon).lpNorm<Eigen::Infinity>() < 1e-8);

  CHECK(e.explained_variance[0] >= e.explained_variance[1]);
  CHECK(e.explained_variance[1] >= e.explained_variance[2]);
  for (int j = 0; j < 3; ++j)
    CHECK(e.explained_variance[j] ==
          doctest::Approx(e.projection.col(j).squaredNorm() / (n - 1)));

  // sign convention: each component's largest-magnitude coordinate positive
  for (int j = 0; j < 3; ++j) {
    Eigen::Index idx;
    e.components.col(j).cwiseAbs().maxCoeff(&idx);
    CHECK(e.components(idx, j) > 0);
  }

  CHECK_THROWS_AS(pca3({"a", "b"}, Eigen::MatrixXd::Random(2, 10)),
                  PipelineError);
  CHECK_THROWS_AS(pca3(labels, Eigen::MatrixXd::Random(n, 2)), PipelineError);
  CHECK_THROWS_AS(
      pca3({"a"}, Eigen::MatrixXd::Random(2, 10)), PipelineError);  // mismatch
}

TEST_CASE("note embedding grid covers every pitch-duration pair once") {
  ModelDims dims = ModelDims::miniature();
  Params<float> p;
  p.init(dims, 79);
  EmbeddingExport e = export_note_embedding_grid(p);
  REQUIRE(e.labels.size() == 1344);  // 84 pitches x 16 durations
  CHECK(e.vectors.rows() == 1344);
  CHECK(e.vectors.cols() == dims.e_n);
  CHECK(e.projection.rows() == 1344);

  std::set<std::string> expect;
  for (int pitch = 24; pitch <= 107; ++pitch)
    for (int dur = 1; dur <= 16; ++dur)
      expect.insert("p" + std::to_string(pitch) + ":d" + std::to_string(dur));
  CHECK(std::set<std::string>(e.labels.begin(), e.labels.end()) == expect);

  // rows really are the token embeddings
  std::size_t at = std::find(e.labels.begin(), e.labels.end(), "p60:d4") -
                   e.labels.begin();
  DurationCode code = encode_duration(4);
  nn::Vec<float> emb = embed_token(p.emb, 60, &code);
  CHECK((e.vectors.row(static_cast<Eigen::Index>(at)).transpose() -
         emb.cast<double>())
            .lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("chord voicings enumerate octave subsets exactly") {
  const std::map<std::string, std::array<int, 3>> qualities = {
      {"major", {0, 4, 7}},
      {"minor", {0, 3, 7}},
      {"diminished", {0, 3, 6}},
      {"augmented", {0, 4, 8}}};

  for (const auto& [name, ivs] : qualities) {
    for (int root_pc : {0, 5, 11}) {
      auto got = chord_voicings({root_pc, name});
      REQUIRE(got.size() == 343);

      // oracle: each tone takes any non-empty subset of its three octaves
      std::set<std::vector<int>> expect;
      const int root = 48 + root_pc;
      for (int m0 = 1; m0 < 8; ++m0)
        for (int m1 = 1; m1 < 8; ++m1)
          for (int m2 = 1; m2 < 8; ++m2) {
            std::vector<int> pitches;
            const int masks[3] = {m0, m1, m2};
            for (int tone = 0; tone < 3; ++tone)
              for (int oct = 0; oct < 3; ++oct)
                if (masks[tone] >> oct & 1)
                  pitches.push_back(root + ivs[tone] + 12 * oct);
            std::sort(pitches.begin(), pitches.end());
            expect.insert(pitches);
          }
      REQUIRE(expect.size() == 343);

      std::set<std::vector<int>> seen;
      for (const auto& voicing : got) {
        std::vector<int> pitches;
        for (const Note& nt : voicing) {
          CHECK(nt.duration == kStepsPerBeat);
          pitches.push_back(nt.pitch);
        }
        CHECK(std::is_sorted(pitches.begin(), pitches.end()));
        CHECK(pitches.size() >= 3);
        CHECK(pitches.size() <= 9);
        std::set<int> pcs;
        for (int pp : pitches) pcs.insert(pp % 12);
        CHECK(pcs == std::set<int>{(root_pc + ivs[0]) % 12,
                                   (root_pc + ivs[1]) % 12,
                                   (root_pc + ivs[2]) % 12});
        seen.insert(pitches);
      }
      CHECK(seen == expect);
    }
  }

  CHECK_THROWS_AS(chord_voicings({0, "sus4"}), ConfigError);
  CHECK_THROWS_AS(chord_voicings({12, "major"}), ConfigError);
  CHECK_THROWS_AS(chord_voicings({-1, "major"}), ConfigError);
}

TEST_CASE("chord embedding export labels and shapes") {
  ModelDims dims = ModelDims::miniature();
  Params<float> p;
  p.init(dims, 83);
  std::vector<ChordLabel> chords = {{0, "major"}, {9, "minor"}};
  EmbeddingExport e = export_chord_embeddings(p, chords);
  REQUIRE(e.labels.size() == 686);
  CHECK(e.vectors.cols() == dims.e_sn);
  CHECK(e.labels.front() == "C:major:0");
  CHECK(e.labels[343] == "A:minor:0");
  CHECK(e.labels.back() == "A:minor:342");
}

TEST_CASE("embedding writers") {
  auto dir = fs::temp_directory_path() / "pt_analysis_csv";
  fs::remove_all(dir);
  fs::create_directories(dir);

  EmbeddingExport e;
  e.labels = {"plain", "with,comma", "p60:d4"};
  e.vectors = Eigen::MatrixXd::Zero(3, 5);
  e.projection.resize(3, 3);
  e.projection << 1, 2, 3, 4.5, -5, 6, 0.125, 8, -9;
  e.components = Eigen::MatrixXd::Identity(5, 3);
  e.explained_variance << 3, 2, 1;

  const auto csv = dir / "emb.csv";
  write_embedding_csv(csv.string(), e);
  std::ifstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "label,x,y,z");
  std::getline(is, line);
  CHECK(line == "plain,1,2,3");
  std::getline(is, line);
  CHECK(line == "\"with,comma\",4.5,-5,6");
  std::getline(is, line);
  CHECK(line == "p60:d4,0.125,8,-9");
  CHECK_FALSE(std::getline(is, line));

  const auto meta = dir / "emb_meta.json";
  write_embedding_metadata(meta.string(), e, {{"kind", "note"}});
  json j = json::parse(std::ifstream(meta));
  CHECK(j.at("rows") == 3);
  CHECK(j.at("dims") == 5);
  CHECK(j.at("explained_variance").size() == 3);
  CHECK(j.at("kind") == "note");
}
