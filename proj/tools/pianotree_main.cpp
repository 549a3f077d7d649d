#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"

#include "pianotree/analysis.hpp"
#include "pianotree/batch.hpp"
#include "pianotree/checkpoint.hpp"
#include "pianotree/dataset.hpp"
#include "pianotree/log.hpp"
#include "pianotree/manifest.hpp"
#include "pianotree/midi.hpp"
#include "pianotree/segment.hpp"
#include "pianotree/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pianotree;

namespace {

struct CommonOpts {
  std::string config;
  std::string out;
  std::string resume;
  std::string device = "cpu";
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool dry_run = false;
  int threads = 1;

  void apply() const {
    if (device != "cpu") throw ConfigError("only --device cpu is supported");
    if (threads < 0) throw ConfigError("--threads must be >= 0");
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#endif
  }
};

void add_common(CLI::App* cmd, CommonOpts& o, bool with_config,
                bool with_resume) {
  if (with_config)
    cmd->add_option("--config", o.config, "JSON config file")->required();
  cmd->add_option("--out", o.out, "output directory")->required();
  if (with_resume)
    cmd->add_option("--resume", o.resume, "checkpoint to continue from");
  cmd->add_option("--seed", o.seed, "root seed for all randomness")
      ->each([&o](const std::string&) { o.seed_given = true; });
  cmd->add_flag("--dry-run", o.dry_run, "validate inputs and exit");
  cmd->add_option("--device", o.device, "compute device (cpu)");
  cmd->add_option("--threads", o.threads, "worker threads (0 = library default)");
}

void ensure_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw PipelineError("cannot create output directory " + out);
}

json load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
}

void check_keys(const json& j, const std::string& scope,
                const std::set<std::string>& required,
                const std::set<std::string>& optional = {}) {
  if (!j.is_object()) throw ConfigError("config: " + scope + " must be an object");
  for (const auto& key : required)
    if (!j.contains(key))
      throw ConfigError("config: missing key '" + scope + "." + key + "'");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!required.count(it.key()) && !optional.count(it.key()))
      throw ConfigError("config: unknown key '" + scope + "." + it.key() + "'");
}

struct FullConfig {
  ModelDims dims;
  TrainConfig train;
};

FullConfig parse_config(const json& j) {
  check_keys(j, "", {"dims", "train"});
  check_keys(j.at("dims"), "dims",
             {"e_n", "e_sn", "e_sc", "d_z", "h_p_enc", "h_t_enc", "h_p_dec",
              "h_t_dec", "h_d_dec", "max_simu_notes"});
  check_keys(j.at("train"), "train",
             {"batch_size", "lr_start", "lr_end", "tf_start", "tf_end",
              "beta_max", "beta_warmup_steps", "max_epochs", "seed",
              "split_ratio", "grad_clip"});
  FullConfig c;
  c.dims = j.at("dims").get<ModelDims>();
  c.train = j.at("train").get<TrainConfig>();
  c.dims.check();
  c.train.check();
  return c;
}

std::vector<std::string> sorted_shard_paths(const std::string& dir) {
  std::vector<std::string> paths;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.size() > 6 && name.substr(name.size() - 6) == ".jsonl" &&
        name.rfind("shard_", 0) == 0)
      paths.push_back(e.path().string());
  }
  std::sort(paths.begin(), paths.end());
  return paths;
}

/// Accepts a preprocess output directory (index.json + shard_*.jsonl) or a
/// single shard file.
std::vector<SegmentRecord> load_records(const std::string& data,
                                        CorpusIndex* index_out) {
  std::vector<SegmentRecord> records;
  if (fs::is_directory(data)) {
    if (index_out) {
      const std::string idx = data + "/index.json";
      if (!fs::exists(idx)) throw DataError("missing index " + idx);
      *index_out = load_index(idx);
    }
    for (const auto& p : sorted_shard_paths(data)) {
      auto part = load_shard(p);
      records.insert(records.end(), part.begin(), part.end());
    }
  } else if (fs::is_regular_file(data)) {
    records = load_shard(data);
  } else {
    throw DataError("data path not found: " + data);
  }
  if (records.empty()) throw DataError("no segment records under " + data);
  return records;
}

Checkpoint load_model(const std::string& path) {
  if (!fs::is_regular_file(path)) throw DataError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

// ----------------------------------------------------------- preprocess

int cmd_preprocess(const CommonOpts& o, const std::string& midi_dir) {
  if (!fs::is_directory(midi_dir)) throw DataError("not a directory: " + midi_dir);
  if (o.dry_run) {
    log_info("dry-run: would ingest " + midi_dir + " into " + o.out);
    return 0;
  }
  auto res = ingest_directory(midi_dir);
  ensure_out_dir(o.out);

  RunManifest m;
  m.command = "preprocess";
  m.inputs = {midi_dir};
  m.seed = o.seed;

  const std::string index_path = o.out + "/index.json";
  save_index(index_path, res.index);
  m.outputs.push_back(index_path);

  constexpr std::size_t kShardSize = 4096;
  int shard_id = 0;
  for (std::size_t base = 0; base < res.records.size(); base += kShardSize) {
    const std::size_t n = std::min(kShardSize, res.records.size() - base);
    char name[32];
    std::snprintf(name, sizeof(name), "shard_%03d.jsonl", shard_id++);
    const std::string path = o.out + "/" + name;
    save_shard(path, {res.records.begin() + base, res.records.begin() + base + n});
    m.outputs.push_back(path);
  }

  const std::string skip_path = o.out + "/skipped.txt";
  {
    std::ofstream os(skip_path, std::ios::trunc);
    for (const auto& [path, reason] : res.skipped)
      os << path << "\t" << reason << "\n";
    if (!os) throw PipelineError("cannot write " + skip_path);
  }
  m.outputs.push_back(skip_path);

  write_manifest(o.out + "/manifest_preprocess.json", m);
  log_info("preprocess: " + std::to_string(res.index.songs.size()) + " songs, " +
           std::to_string(res.records.size()) + " segments, " +
           std::to_string(res.skipped.size()) + " files skipped");
  return 0;
}

// ---------------------------------------------------------------- train

int cmd_train(CommonOpts& o, const std::string& data_dir) {
  FullConfig cfg = parse_config(load_json_file(o.config));
  if (o.seed_given) cfg.train.seed = o.seed;

  CorpusIndex index;
  auto records = load_records(data_dir, &index);

  auto [train_ids, test_ids] =
      split_dataset(index, cfg.train.split_ratio, cfg.train.seed);
  std::set<std::string> train_songs(train_ids.begin(), train_ids.end());
  std::vector<SegmentRecord> train_records;
  for (const auto& r : records)
    if (train_songs.count(r.song)) train_records.push_back(r);
  if (train_records.empty()) throw DataError("train split has no segments");

  auto augmented = augment(train_records);
  log_info("train: " + std::to_string(train_ids.size()) + " train songs / " +
           std::to_string(test_ids.size()) + " test songs; " +
           std::to_string(train_records.size()) + " segments -> " +
           std::to_string(augmented.size()) + " after augmentation");

  if (o.dry_run) {
    log_info("dry-run: config valid, would train into " + o.out);
    return 0;
  }
  ensure_out_dir(o.out);

  {
    json split = {{"train", train_ids}, {"test", test_ids}};
    std::ofstream os(o.out + "/split.json", std::ios::trunc);
    os << split.dump(2) << "\n";
    if (!os) throw PipelineError("cannot write split.json");
  }

  StepCallback progress = [](long step, int epoch, const LossReport& rep) {
    if (step % 25 == 0)
      log_info("step " + std::to_string(step) + " epoch " +
               std::to_string(epoch) + " total " + std::to_string(rep.total));
    return true;
  };
  TrainResult result =
      train(cfg.dims, cfg.train, augmented, o.out, o.resume, progress);

  RunManifest m;
  m.command = "train";
  m.config_path = o.config;
  m.inputs = {data_dir};
  if (!o.resume.empty()) m.inputs.push_back(o.resume);
  m.seed = cfg.train.seed;
  m.outputs = {o.out + "/split.json", o.out + "/metrics.jsonl"};
  for (const auto& e : fs::directory_iterator(o.out)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("ckpt_epoch_", 0) == 0) m.outputs.push_back(e.path().string());
  }
  std::sort(m.outputs.begin(), m.outputs.end());
  write_manifest(o.out + "/manifest_train.json", m);

  log_info("train: finished after " + std::to_string(result.steps) +
           " steps; last checkpoint " + result.last_checkpoint);
  return 0;
}

// ----------------------------------------------------------------- eval

int cmd_eval(const CommonOpts& o, const std::string& ckpt_path,
             const std::string& data) {
  Checkpoint ckpt = load_model(ckpt_path);
  auto records = load_records(data, nullptr);
  if (o.dry_run) {
    log_info("dry-run: would evaluate " + std::to_string(records.size()) +
             " segments");
    return 0;
  }
  ensure_out_dir(o.out);

  std::vector<const PolySegment*> segs;
  segs.reserve(records.size());
  for (const auto& r : records) segs.push_back(&r.seg);
  ReconReport rep = reconstruction_report(ckpt.params, segs);

  const std::string json_path = o.out + "/report.json";
  {
    std::ofstream os(json_path, std::ios::trunc);
    os << report_to_json(rep).dump(2) << "\n";
    if (!os) throw PipelineError("cannot write " + json_path);
  }
  const std::string txt_path = o.out + "/report.txt";
  {
    std::ofstream os(txt_path, std::ios::trunc);
    os << report_table(rep);
    if (!os) throw PipelineError("cannot write " + txt_path);
  }
  std::fputs(report_table(rep).c_str(), stdout);

  RunManifest m;
  m.command = "eval";
  m.inputs = {ckpt_path, data};
  m.seed = o.seed;
  m.outputs = {json_path, txt_path};
  write_manifest(o.out + "/manifest_eval.json", m);
  return 0;
}

// ---------------------------------------------------------- interpolate

PolySegment first_segment(const std::string& midi_path) {
  auto ingest = from_midi_file(midi_path);
  if (ingest.segments.empty())
    throw DataError("no segments in " + midi_path +
                    (ingest.warnings.empty() ? "" : " (" + ingest.warnings[0] + ")"));
  if (ingest.segments.size() > 1)
    log_warn(midi_path + ": using first of " +
             std::to_string(ingest.segments.size()) + " segments");
  return ingest.segments[0];
}

int cmd_interpolate(const CommonOpts& o, const std::string& ckpt_path,
                    const std::string& a_path, const std::string& b_path,
                    int n) {
  Checkpoint ckpt = load_model(ckpt_path);
  PolySegment a = first_segment(a_path);
  PolySegment b = first_segment(b_path);
  if (o.dry_run) {
    log_info("dry-run: would write " + std::to_string(n) + " interpolants");
    return 0;
  }
  ensure_out_dir(o.out);

  auto segs = interpolate(ckpt.params, a, b, n);

  RunManifest m;
  m.command = "interpolate";
  m.inputs = {ckpt_path, a_path, b_path};
  m.seed = o.seed;
  for (int i = 0; i < n; ++i) {
    const double alpha = static_cast<double>(i) / (n - 1);
    char name[48];
    std::snprintf(name, sizeof(name), "interp_%02d_alpha_%.3f.mid", i, alpha);
    const std::string path = o.out + "/" + name;
    write_midi_file(path, segs[static_cast<std::size_t>(i)]);
    m.outputs.push_back(path);
  }
  write_manifest(o.out + "/manifest_interpolate.json", m);
  log_info("interpolate: wrote " + std::to_string(n) + " files");
  return 0;
}

// --------------------------------------------------------------- sample

int cmd_sample(const CommonOpts& o, const std::string& ckpt_path, int count) {
  Checkpoint ckpt = load_model(ckpt_path);
  if (count < 1) throw ConfigError("sample: count must be >= 1");
  if (o.dry_run) {
    log_info("dry-run: would sample " + std::to_string(count) + " segments");
    return 0;
  }
  ensure_out_dir(o.out);

  RunManifest m;
  m.command = "sample";
  m.inputs = {ckpt_path};
  m.seed = o.seed;

  const int d_z = ckpt.dims.d_z;
  constexpr int kChunk = 256;
  int written = 0;
  for (int base = 0; base < count; base += kChunk) {
    const int n = std::min(kChunk, count - base);
    nn::Mat<float> z(d_z, n);
    for (int i = 0; i < n; ++i) {
      nn::Rng rng(nn::derive_seed(o.seed, 0x5a17u,
                                  static_cast<std::uint64_t>(base + i)));
      for (int j = 0; j < d_z; ++j)
        z(j, i) = static_cast<float>(rng.normal());
    }
    auto segs = batch_decode(ckpt.params, z);
    for (int i = 0; i < n; ++i) {
      if (!is_valid(segs[static_cast<std::size_t>(i)]))
        throw PipelineError("sample: decoder produced an invalid segment");
      char name[32];
      std::snprintf(name, sizeof(name), "sample_%03d.mid", written);
      const std::string path = o.out + "/" + name;
      write_midi_file(path, segs[static_cast<std::size_t>(i)]);
      m.outputs.push_back(path);
      ++written;
    }
  }
  write_manifest(o.out + "/manifest_sample.json", m);
  log_info("sample: wrote " + std::to_string(written) + " files");
  return 0;
}

// ---------------------------------------------------- export-embeddings

int parse_root_pc(const std::string& name) {
  static const std::map<std::string, int> kRoots = {
      {"C", 0},  {"C#", 1}, {"Db", 1}, {"D", 2},  {"D#", 3}, {"Eb", 3},
      {"E", 4},  {"F", 5},  {"F#", 6}, {"Gb", 6}, {"G", 7},  {"G#", 8},
      {"Ab", 8}, {"A", 9},  {"A#", 10}, {"Bb", 10}, {"B", 11}};
  auto it = kRoots.find(name);
  if (it == kRoots.end()) throw ConfigError("chords: unknown root '" + name + "'");
  return it->second;
}

std::vector<ChordLabel> parse_chord_spec(const std::string& spec) {
  if (spec == "majors") {
    std::vector<ChordLabel> out;
    for (int pc = 0; pc < 12; ++pc) out.push_back({pc, "major"});
    return out;
  }
  if (spec == "diatonic") {
    // triads on the seven degrees of C major
    return {{0, "major"}, {2, "minor"},      {4, "minor"}, {5, "major"},
            {7, "major"}, {9, "minor"},      {11, "diminished"}};
  }
  std::vector<ChordLabel> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    std::size_t comma = spec.find(',', pos);
    if (comma == std::string::npos) comma = spec.size();
    const std::string item = spec.substr(pos, comma - pos);
    std::size_t colon = item.find(':');
    if (item.empty() || colon == std::string::npos)
      throw ConfigError("chords: expected root:quality, got '" + item + "'");
    out.push_back({parse_root_pc(item.substr(0, colon)), item.substr(colon + 1)});
    pos = comma + 1;
  }
  if (out.empty()) throw ConfigError("chords: empty spec");
  return out;
}

int cmd_export_embeddings(const CommonOpts& o, const std::string& ckpt_path,
                          const std::string& which, const std::string& chords) {
  Checkpoint ckpt = load_model(ckpt_path);
  if (o.dry_run) {
    log_info("dry-run: would export " + which + " embeddings");
    return 0;
  }
  ensure_out_dir(o.out);

  EmbeddingExport e;
  json extra = {{"kind", which},
                {"checkpoint", ckpt_path},
                {"checkpoint_checksum", to_hex(fnv1a64_file(ckpt_path))}};
  if (which == "note") {
    e = export_note_embedding_grid(ckpt.params);
  } else {
    auto labels = parse_chord_spec(chords);
    e = export_chord_embeddings(ckpt.params, labels);
    extra["chords"] = chords;
  }

  const std::string stem = o.out + "/" + which + "_embeddings";
  write_embedding_csv(stem + ".csv", e);
  write_embedding_metadata(stem + "_meta.json", e, extra);

  RunManifest m;
  m.command = "export-embeddings";
  m.inputs = {ckpt_path};
  m.seed = o.seed;
  m.outputs = {stem + ".csv", stem + "_meta.json"};
  write_manifest(o.out + "/manifest_export_embeddings.json", m);
  log_info("export-embeddings: " + std::to_string(e.projection.rows()) +
           " rows -> " + stem + ".csv");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PianoTree VAE: hierarchical latent-variable model for polyphonic music"};
  app.require_subcommand(1);

  CommonOpts opts;
  std::string midi_dir, data_dir, data_path, ckpt_path, a_path, b_path;
  std::string which, chords = "majors";
  int n_steps = 8, count = 1;

  auto* pre = app.add_subcommand("preprocess", "ingest a MIDI directory into shards");
  pre->add_option("midi_dir", midi_dir, "directory of .mid files")->required();
  add_common(pre, opts, false, false);

  auto* tr = app.add_subcommand("train", "optimize a model on preprocessed shards");
  tr->add_option("data_dir", data_dir, "preprocess output directory")->required();
  add_common(tr, opts, true, true);

  auto* ev = app.add_subcommand("eval", "reconstruction report for a checkpoint");
  ev->add_option("checkpoint", ckpt_path, "model checkpoint")->required();
  ev->add_option("data", data_path, "shard file or preprocess directory")->required();
  add_common(ev, opts, false, false);

  auto* ip = app.add_subcommand("interpolate", "latent interpolation between two segments");
  ip->add_option("checkpoint", ckpt_path, "model checkpoint")->required();
  ip->add_option("a", a_path, "first MIDI file")->required();
  ip->add_option("b", b_path, "second MIDI file")->required();
  ip->add_option("n", n_steps, "number of interpolants (>= 2)")->required();
  add_common(ip, opts, false, false);

  auto* sa = app.add_subcommand("sample", "decode segments from the latent prior");
  sa->add_option("checkpoint", ckpt_path, "model checkpoint")->required();
  sa->add_option("count", count, "number of samples")->required();
  add_common(sa, opts, false, false);

  auto* ex = app.add_subcommand("export-embeddings", "embedding-geometry exports");
  ex->add_option("checkpoint", ckpt_path, "model checkpoint")->required();
  ex->add_option("which", which, "note or chord")
      ->required()
      ->check(CLI::IsMember({"note", "chord"}));
  ex->add_option("--chords", chords,
                 "majors | diatonic | comma list of root:quality");
  add_common(ex, opts, false, false);

  try {
    app.parse(argc, argv);
    opts.apply();
    if (pre->parsed()) return cmd_preprocess(opts, midi_dir);
    if (tr->parsed()) return cmd_train(opts, data_dir);
    if (ev->parsed()) return cmd_eval(opts, ckpt_path, data_path);
    if (ip->parsed()) return cmd_interpolate(opts, ckpt_path, a_path, b_path, n_steps);
    if (sa->parsed()) return cmd_sample(opts, ckpt_path, count);
    if (ex->parsed()) return cmd_export_embeddings(opts, ckpt_path, which, chords);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    log_error(e.what());
    return 1;
  } catch (const DataError& e) {
    log_error(e.what());
    return 2;
  } catch (const std::exception& e) {
    log_error(e.what());
    return 3;
  }
}
