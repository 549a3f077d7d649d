#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "pianotree/types.hpp"

namespace pianotree {

/// One shard line: a segment plus its identity and provenance.
struct SegmentRecord {
  std::string id;    // unique across the corpus, e.g. "song:007" or "song:007:t-3"
  std::string song;  // source song id; split assignment is per song
  PolySegment seg;

  friend bool operator==(const SegmentRecord&, const SegmentRecord&) = default;
};

struct SongEntry {
  std::string id;
  std::string path;
  std::string meter;  // "4/4" or "2/4"
  std::vector<std::string> segment_ids;
  std::string split;  // "train" or "test" once assigned, else empty
};

struct CorpusIndex {
  std::vector<SongEntry> songs;

  const SongEntry* find(const std::string& song_id) const;
};

nlohmann::json segment_to_json(const PolySegment& seg);
PolySegment segment_from_json(const nlohmann::json& j);

/// Shards are JSON-lines files, one record per line:
/// {"id": ..., "song": ..., "steps": T, "onsets": [[[pitch,duration],...] x T]}
void save_shard(const std::string& path, const std::vector<SegmentRecord>& records);
std::vector<SegmentRecord> load_shard(const std::string& path);

void save_index(const std::string& path, const CorpusIndex& index);
CorpusIndex load_index(const std::string& path);

/// Deterministic song-level split. Returns (train ids, test ids);
/// train gets round(ratio * n) songs, clamped so both sides are non-empty.
std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    const CorpusIndex& index, double ratio, std::uint64_t seed);

/// Expand every record into 12 transposed copies (shifts -6..+5). Copies keep
/// the source song id, so they inherit its split; ids gain a ":t{shift}" tag.
std::vector<SegmentRecord> augment(const std::vector<SegmentRecord>& records);

/// Ingest every .mid/.midi file under a directory (sorted by path).
struct PreprocessResult {
  CorpusIndex index;
  std::vector<SegmentRecord> records;
  // (path, reason) for files contributing nothing: "parse", "meter", "empty"
  std::vector<std::pair<std::string, std::string>> skipped;
  std::vector<std::string> warnings;
};

PreprocessResult ingest_directory(const std::string& midi_dir);

}  // namespace pianotree
