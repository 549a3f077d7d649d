#include "pianotree/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "pianotree/midi.hpp"
#include "pianotree/segment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace pianotree {

const SongEntry* CorpusIndex::find(const std::string& song_id) const {
  for (const SongEntry& s : songs)
    if (s.id == song_id) return &s;
  return nullptr;
}

json segment_to_json(const PolySegment& seg) {
  json onsets = json::array();
  for (const auto& list : seg.onsets) {
    json step = json::array();
    for (const Note& n : list) step.push_back({n.pitch, n.duration});
    onsets.push_back(std::move(step));
  }
  return json{{"steps", seg.num_steps}, {"onsets", std::move(onsets)}};
}

PolySegment segment_from_json(const json& j) {
  PolySegment seg(j.at("steps").get<int>());
  const json& onsets = j.at("onsets");
  if (static_cast<int>(onsets.size()) != seg.num_steps)
    throw DataError("segment record: onsets length != steps");
  for (int t = 0; t < seg.num_steps; ++t)
    for (const json& n : onsets[t])
      seg.onsets[t].push_back({n.at(0).get<int>(), n.at(1).get<int>()});
  return seg;
}

void save_shard(const std::string& path, const std::vector<SegmentRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write shard " + path);
  for (const SegmentRecord& r : records) {
    json line = segment_to_json(r.seg);
    line["id"] = r.id;
    line["song"] = r.song;
    out << line.dump() << "\n";
  }
}

std::vector<SegmentRecord> load_shard(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open shard " + path);
  std::vector<SegmentRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
      out.push_back({j.at("id").get<std::string>(), j.at("song").get<std::string>(),
                     segment_from_json(j)});
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_index(const std::string& path, const CorpusIndex& index) {
  json songs = json::array();
  for (const SongEntry& s : index.songs)
    songs.push_back({{"id", s.id},
                     {"path", s.path},
                     {"meter", s.meter},
                     {"segments", s.segment_ids},
                     {"split", s.split}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write index " + path);
  out << json{{"songs", std::move(songs)}}.dump(2) << "\n";
}

CorpusIndex load_index(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open index " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  CorpusIndex index;
  for (const json& s : j.at("songs")) {
    SongEntry e;
    e.id = s.at("id").get<std::string>();
    e.path = s.at("path").get<std::string>();
    e.meter = s.at("meter").get<std::string>();
    e.segment_ids = s.at("segments").get<std::vector<std::string>>();
    e.split = s.value("split", "");
    index.songs.push_back(std::move(e));
  }
  return index;
}

std::pair<std::vector<std::string>, std::vector<std::string>> split_dataset(
    const CorpusIndex& index, double ratio, std::uint64_t seed) {
  if (index.songs.empty()) throw DataError("split: empty corpus");
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must be in (0,1)");
  std::vector<std::string> ids;
  for (const SongEntry& s : index.songs) ids.push_back(s.id);
  std::sort(ids.begin(), ids.end());

  // hand-rolled Fisher-Yates: std::shuffle is implementation-defined
  std::mt19937_64 rng(seed);
  for (size_t i = ids.size() - 1; i > 0; --i) {
    size_t j = static_cast<size_t>(rng() % (i + 1));
    std::swap(ids[i], ids[j]);
  }

  size_t n = ids.size();
  size_t n_train = static_cast<size_t>(std::lround(ratio * static_cast<double>(n)));
  if (n >= 2) n_train = std::clamp<size_t>(n_train, 1, n - 1);
  std::vector<std::string> train(ids.begin(), ids.begin() + n_train);
  std::vector<std::string> test(ids.begin() + n_train, ids.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {std::move(train), std::move(test)};
}

std::vector<SegmentRecord> augment(const std::vector<SegmentRecord>& records) {
  std::vector<SegmentRecord> out;
  out.reserve(records.size() * 12);
  for (const SegmentRecord& r : records) {
    for (int shift = -6; shift <= 5; ++shift) {
      std::string tag = ":t" + std::string(shift < 0 ? "-" : "+") +
                        std::to_string(std::abs(shift));
      out.push_back({r.id + tag, r.song, transpose(r.seg, shift)});
    }
  }
  return out;
}

PreprocessResult ingest_directory(const std::string& midi_dir) {
  if (!fs::is_directory(midi_dir))
    throw DataError("not a directory: " + midi_dir);
  std::vector<std::string> paths;
  for (const auto& entry : fs::recursive_directory_iterator(midi_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    for (char& c : ext) c = static_cast<char>(std::tolower(c));
    if (ext == ".mid" || ext == ".midi") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw DataError("no MIDI files under " + midi_dir);

  PreprocessResult out;
  for (const std::string& path : paths) {
    std::string song = fs::path(path).stem().string();
    MidiIngest ingest;
    try {
      ingest = from_midi_file(path);
    } catch (const DataError& e) {
      out.skipped.emplace_back(path, "parse");
      out.warnings.push_back(std::string(e.what()));
      continue;
    }
    for (const std::string& w : ingest.warnings)
      out.warnings.push_back(song + ": " + w);
    if (!ingest.meter_ok) {
      out.skipped.emplace_back(path, "meter");
      continue;
    }
    if (ingest.segments.empty()) {
      out.skipped.emplace_back(path, "empty");
      continue;
    }
    SongEntry entry{song, path, ingest.meter, {}, ""};
    char buf[16];
    for (size_t w = 0; w < ingest.segments.size(); ++w) {
      std::snprintf(buf, sizeof buf, ":%03zu", w);
      std::string id = song + buf;
      entry.segment_ids.push_back(id);
      out.records.push_back({id, song, ingest.segments[w]});
    }
    out.index.songs.push_back(std::move(entry));
  }
  return out;
}

}  // namespace pianotree
