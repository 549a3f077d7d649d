#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "helpers.hpp"
#include "pianotree/dataset.hpp"
#include "pianotree/midi.hpp"

using namespace pianotree;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("segment json round trip") {
  nn::Rng rng(61);
  for (int i = 0; i < 50; ++i) {
    auto s = ptest::random_segment(rng);
    CHECK(segment_from_json(segment_to_json(s)) == s);
  }
}

TEST_CASE("shard save/load round trip and determinism") {
  auto dir = fresh_dir("pt_shard_test");
  nn::Rng rng(71);
  std::vector<SegmentRecord> recs;
  for (int i = 0; i < 20; ++i)
    recs.push_back({"song" + std::to_string(i / 4) + ":" + std::to_string(i % 4),
                    "song" + std::to_string(i / 4), ptest::random_segment(rng)});

  const auto path = (dir / "shard_000.jsonl").string();
  save_shard(path, recs);
  CHECK(load_shard(path) == recs);

  save_shard((dir / "again.jsonl").string(), recs);
  CHECK(slurp(path) == slurp(dir / "again.jsonl"));

  std::ofstream(dir / "bad.jsonl") << "{\"id\": \"x\"\n";  // truncated json
  CHECK_THROWS_AS(load_shard((dir / "bad.jsonl").string()), DataError);
}

TEST_CASE("index save/load round trip") {
  auto dir = fresh_dir("pt_index_test");
  CorpusIndex idx;
  idx.songs.push_back({"alpha", "/x/alpha.mid", "4/4", {"alpha:000", "alpha:001"}, ""});
  idx.songs.push_back({"beta", "/x/beta.mid", "2/4", {"beta:000"}, "train"});
  const auto path = (dir / "index.json").string();
  save_index(path, idx);
  CorpusIndex back = load_index(path);
  REQUIRE(back.songs.size() == 2);
  CHECK(back.songs[0].id == "alpha");
  CHECK(back.songs[0].segment_ids.size() == 2);
  CHECK(back.songs[1].split == "train");
  CHECK(back.find("beta") != nullptr);
  CHECK(back.find("gamma") == nullptr);
}

TEST_CASE("split is deterministic, partitioning, and song-level") {
  CorpusIndex idx;
  for (int i = 0; i < 20; ++i)
    idx.songs.push_back({"song" + std::to_string(i), "", "4/4", {}, ""});

  auto [tr1, te1] = split_dataset(idx, 0.9, 7);
  auto [tr2, te2] = split_dataset(idx, 0.9, 7);
  CHECK(tr1 == tr2);
  CHECK(te1 == te2);
  CHECK(tr1.size() == 18);
  CHECK(te1.size() == 2);

  std::set<std::string> all(tr1.begin(), tr1.end());
  for (const auto& id : te1) CHECK(all.insert(id).second);  // no leak
  CHECK(all.size() == 20);

  auto [tr3, te3] = split_dataset(idx, 0.9, 8);
  CHECK(tr3 != tr1);  // a different seed moves songs

  // both sides stay non-empty at extreme ratios
  auto [tr4, te4] = split_dataset(idx, 0.99, 7);
  CHECK(!tr4.empty());
  CHECK(!te4.empty());

  CHECK_THROWS_AS(split_dataset(idx, 1.5, 0), ConfigError);
  CHECK_THROWS_AS(split_dataset(CorpusIndex{}, 0.9, 0), DataError);
}

TEST_CASE("augment emits 12 keys per record tagged by shift") {
  nn::Rng rng(81);
  std::vector<SegmentRecord> recs = {{"a:000", "a", ptest::random_segment(rng)}};
  auto out = augment(recs);
  CHECK(out.size() == 12);
  std::set<std::string> ids;
  bool has_identity = false;
  for (const auto& r : out) {
    CHECK(r.song == "a");
    CHECK(is_valid(r.seg));
    ids.insert(r.id);
    if (r.id == "a:000:t+0") {
      has_identity = true;
      CHECK(r.seg == recs[0].seg);
    }
  }
  CHECK(ids.size() == 12);  // distinct tags
  CHECK(has_identity);
}

TEST_CASE("ingest_directory sorts, skips, and indexes") {
  auto dir = fresh_dir("pt_ingest_test");

  PolySegment seg_a;
  seg_a.onsets[0] = {{60, 4}};
  write_midi_file((dir / "a_song.mid").string(), seg_a);

  PolySegment seg_b;
  seg_b.onsets[4] = {{55, 2}, {67, 4}};
  write_midi_file((dir / "b_song.mid").string(), seg_b);

  write_midi_file((dir / "c_empty.mid").string(), PolySegment());

  std::ofstream(dir / "d_junk.mid", std::ios::binary) << "not midi";

  // 3/4 file: header + minimal track with one note
  {
    std::vector<std::uint8_t> bytes = {
        0x4d, 0x54, 0x68, 0x64, 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
        0x4d, 0x54, 0x72, 0x6b, 0, 0, 0, 20,
        0x00, 0xff, 0x58, 0x04, 0x03, 0x02, 0x18, 0x08,
        0x00, 0x90, 60, 90,
        0x60, 0x80, 60, 0,
        0x00, 0xff, 0x2f, 0x00};
    std::ofstream os(dir / "e_waltz.mid", std::ios::binary);
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  }

  auto res = ingest_directory(dir.string());
  REQUIRE(res.index.songs.size() == 2);
  CHECK(res.index.songs[0].id == "a_song");  // sorted by path
  CHECK(res.index.songs[1].id == "b_song");
  CHECK(res.records.size() == 2);
  CHECK(res.records[0].id == "a_song:000");
  CHECK(res.records[0].seg == seg_a);
  CHECK(res.records[1].seg == seg_b);

  REQUIRE(res.skipped.size() == 3);
  std::map<std::string, std::string> by_reason;
  for (const auto& [path, reason] : res.skipped)
    by_reason[fs::path(path).stem().string()] = reason;
  CHECK(by_reason["c_empty"] == "empty");
  CHECK(by_reason["d_junk"] == "parse");
  CHECK(by_reason["e_waltz"] == "meter");

  CHECK_THROWS_AS(ingest_directory((dir / "missing").string()), DataError);

  auto empty_dir = fresh_dir("pt_ingest_empty");
  CHECK_THROWS_AS(ingest_directory(empty_dir.string()), DataError);
}
