#include <bcp/corpus.hpp>

#include <bcp/features.hpp>

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace bcp {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Label label) {
  switch (label) {
    case Label::NoBc: return "NO_BC";
    case Label::Yeah: return "YEAH";
    case Label::UhHuh: return "UH_HUH";
  }
  fail("InvalidConfig", "unknown label");
}

const char* to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  fail("InvalidConfig", "unknown split");
}

Label label_from_string(const std::string& s) {
  if (s == "NO_BC") return Label::NoBc;
  if (s == "YEAH") return Label::Yeah;
  if (s == "UH_HUH") return Label::UhHuh;
  fail("InvalidConfig", "unknown label '" + s + "'");
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  fail("InvalidConfig", "unknown split '" + s + "'");
}

std::string normalize_utterance(const std::string& raw) {
  std::string out;
  out.reserve(raw.size());
  bool in_marker = false;
  bool pending_space = false;
  for (char ch : raw) {
    if (ch == '[') { in_marker = true; continue; }
    if (ch == ']') { in_marker = false; continue; }
    if (in_marker) continue;
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '-') {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(static_cast<char>(std::tolower(c)));
    } else {
      // whitespace and stripped punctuation both separate words
      pending_space = true;
    }
  }
  return out;
}

std::vector<std::string> extract_markers(const std::string& raw) {
  std::vector<std::string> markers;
  std::string current;
  bool in_marker = false;
  for (char ch : raw) {
    if (ch == '[') {
      in_marker = true;
      current = "[";
    } else if (ch == ']' && in_marker) {
      current += ']';
      std::transform(current.begin(), current.end(), current.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      markers.push_back(current);
      in_marker = false;
    } else if (in_marker) {
      current += ch;
    }
  }
  return markers;
}

namespace {

std::set<std::string> normalized_set(std::initializer_list<const char*> items) {
  std::set<std::string> out;
  for (const char* item : items) out.insert(normalize_utterance(item));
  return out;
}

std::set<std::string> load_lexicon_file(const fs::path& path, bool markers) {
  std::set<std::string> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string entry = markers ? line : normalize_utterance(line);
    if (markers) {
      // markers keep their brackets; just trim and lowercase
      auto first = entry.find_first_not_of(" \t\r");
      auto last = entry.find_last_not_of(" \t\r");
      entry = (first == std::string::npos) ? "" : entry.substr(first, last - first + 1);
      std::transform(entry.begin(), entry.end(), entry.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    }
    if (!entry.empty()) out.insert(entry);
  }
  return out;
}

std::vector<std::string> split_words(const std::string& normalized) {
  std::vector<std::string> words;
  std::istringstream in(normalized);
  std::string w;
  while (in >> w) words.push_back(w);
  return words;
}

}  // namespace

TokenLexicon TokenLexicon::english_defaults() {
  TokenLexicon lex;
  lex.yeah_tokens = normalized_set({"yeah", "yes", "yep"});
  lex.uhhuh_tokens = normalized_set({"uh-huh", "um-hum"});
  lex.exclusion_markers = {"[laughter]"};
  return lex;
}

TokenLexicon TokenLexicon::german_defaults() {
  TokenLexicon lex;
  lex.yeah_tokens = normalized_set({"ja", "voll", "oh mein gott"});
  lex.uhhuh_tokens = normalized_set({"hm hm", "mh mh", "mhm mhm"});
  lex.multiword_bc = normalized_set({"hm hm", "mh mh", "mhm mhm", "oh mein gott"});
  lex.intensifiers = normalized_set({"voll"});
  return lex;
}

TokenLexicon TokenLexicon::load_dir(const std::string& dir) {
  fs::path base(dir);
  if (!fs::is_directory(base)) fail("IoFailure", dir + " is not a directory");
  TokenLexicon lex;
  lex.yeah_tokens = load_lexicon_file(base / "yeah.txt", false);
  lex.uhhuh_tokens = load_lexicon_file(base / "uhhuh.txt", false);
  lex.exclusion_markers = load_lexicon_file(base / "exclude.txt", true);
  lex.multiword_bc = load_lexicon_file(base / "multiword.txt", false);
  lex.intensifiers = load_lexicon_file(base / "intensifiers.txt", false);
  if (!std::ranges::all_of(lex.yeah_tokens,
                           [&](const std::string& t) { return !lex.uhhuh_tokens.count(t); }))
    fail("InvalidConfig", dir + ": yeah and uh-huh lexicons overlap");
  return lex;
}

BcCategory categorize_bc(const std::string& raw_utterance, const TokenLexicon& lexicon) {
  for (const std::string& marker : extract_markers(raw_utterance))
    if (lexicon.exclusion_markers.count(marker)) return BcCategory::Reject;
  std::string text = normalize_utterance(raw_utterance);
  if (lexicon.yeah_tokens.count(text)) return BcCategory::Yeah;
  if (lexicon.uhhuh_tokens.count(text)) return BcCategory::UhHuh;
  return BcCategory::Reject;
}

bool geco_is_bc(const std::string& raw_utterance, double duration_ms,
                const TokenLexicon& lexicon) {
  if (duration_ms <= 0.0) fail("InvalidConfig", "geco_is_bc: duration_ms must be positive");
  if (duration_ms < 1000.0) return true;
  std::set<std::string> covered;
  for (const auto& t : lexicon.yeah_tokens)
    for (const auto& w : split_words(t)) covered.insert(w);
  for (const auto& t : lexicon.uhhuh_tokens)
    for (const auto& w : split_words(t)) covered.insert(w);
  for (const auto& t : lexicon.multiword_bc)
    for (const auto& w : split_words(t)) covered.insert(w);
  for (const auto& t : lexicon.intensifiers)
    for (const auto& w : split_words(t)) covered.insert(w);
  std::vector<std::string> words = split_words(normalize_utterance(raw_utterance));
  if (words.empty()) return false;
  return std::ranges::all_of(words, [&](const std::string& w) { return covered.count(w) > 0; });
}

NegativeSampleResult sample_negatives(const std::vector<Instance>& positives,
                                      double recording_duration_ms, double offset_ms,
                                      double window_ms) {
  if (offset_ms <= 0.0 || window_ms <= 0.0)
    fail("InvalidConfig", "sample_negatives: offset_ms and window_ms must be positive");
  NegativeSampleResult result;
  for (const Instance& pos : positives) {
    double t_neg = pos.t_ms - offset_ms;
    double window_start = t_neg - window_ms;
    if (window_start < 0.0 || t_neg > recording_duration_ms) {
      ++result.skipped_out_of_range;
      continue;
    }
    bool overlaps = std::ranges::any_of(positives, [&](const Instance& other) {
      return other.listener_id == pos.listener_id && other.t_ms >= window_start &&
             other.t_ms <= t_neg;
    });
    if (overlaps) {
      ++result.skipped_overlap;
      continue;
    }
    Instance neg = pos;
    neg.instance_id = pos.instance_id + "-neg";
    neg.t_ms = t_neg;
    neg.label = Label::NoBc;
    result.negatives.push_back(std::move(neg));
  }
  return result;
}

IdAssignment assign_interlocutor_ids(
    const std::map<std::string, std::optional<std::string>>& channels, std::uint64_t seed) {
  std::set<std::string> pool_set;
  for (const auto& [channel, speaker] : channels)
    if (speaker) pool_set.insert(*speaker);
  std::size_t n_missing =
      static_cast<std::size_t>(std::ranges::count_if(channels, [](const auto& kv) {
        return !kv.second.has_value();
      }));
  if (n_missing > 0 && pool_set.empty())
    fail("EmptyPool", "no known speakers to draw from");
  std::vector<std::string> pool(pool_set.begin(), pool_set.end());
  Rng rng(seed);
  IdAssignment out;
  std::set<std::string> unique;
  for (const auto& [channel, speaker] : channels) {
    std::string id = speaker ? *speaker : pool[rng.index(pool.size())];
    if (!speaker) ++out.n_assigned;
    out.channel_to_speaker[channel] = id;
    unique.insert(id);
  }
  out.n_unique = unique.size();
  return out;
}

std::map<std::string, Split> split_conversations(const std::vector<std::string>& dialog_ids,
                                                 const std::array<std::size_t, 3>& sizes) {
  if (sizes[0] + sizes[1] + sizes[2] != dialog_ids.size())
    fail("SizeMismatch", "split sizes sum to " + std::to_string(sizes[0] + sizes[1] + sizes[2]) +
                             " but there are " + std::to_string(dialog_ids.size()) + " dialogs");
  std::map<std::string, Split> out;
  for (std::size_t i = 0; i < dialog_ids.size(); ++i) {
    Split split = i < sizes[0]            ? Split::Train
                  : i < sizes[0] + sizes[1] ? Split::Dev
                                            : Split::Test;
    auto [it, inserted] = out.emplace(dialog_ids[i], split);
    if (!inserted) fail("InvalidConfig", "duplicate dialog id '" + dialog_ids[i] + "'");
  }
  return out;
}

CorpusStats corpus_stats(const std::vector<Instance>& instances) {
  CorpusStats stats;
  std::set<std::string> dialogs, people;
  for (const Instance& inst : instances) {
    ++stats.class_counts[static_cast<std::size_t>(inst.label)];
    dialogs.insert(inst.dialog_id);
    people.insert(inst.speaker_id);
    people.insert(inst.listener_id);
  }
  stats.conversations = dialogs.size();
  stats.interlocutors = people.size();
  return stats;
}

void write_stats_csv(const std::string& path, const CorpusStats& stats,
                     const std::string& meta_comment) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail("IoFailure", "cannot open " + path + " for writing");
  if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
  std::size_t total = stats.class_counts[0] + stats.class_counts[1] + stats.class_counts[2];
  out << "metric,count,share\n";
  const char* names[3] = {"no_bc", "yeah", "uh_huh"};
  char buf[64];
  for (std::size_t i = 0; i < 3; ++i) {
    double share = total ? static_cast<double>(stats.class_counts[i]) / static_cast<double>(total) : 0.0;
    std::snprintf(buf, sizeof buf, "%.6g", share);
    out << names[i] << ',' << stats.class_counts[i] << ',' << buf << "\n";
  }
  out << "total," << total << ",1\n";
  out << "conversations," << stats.conversations << ",\n";
  out << "interlocutors," << stats.interlocutors << ",\n";
  if (!out) fail("IoFailure", "short write to " + path);
}

void write_manifest(const std::string& path, const std::vector<Instance>& instances) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) fail("IoFailure", "cannot open " + tmp + " for writing");
    for (const Instance& inst : instances) {
      json record;
      record["instance_id"] = inst.instance_id;
      record["dialog_id"] = inst.dialog_id;
      record["channel"] = std::string(1, inst.channel);
      record["speaker_id"] = inst.speaker_id;
      record["listener_id"] = inst.listener_id;
      record["t_ms"] = inst.t_ms;
      record["label"] = to_string(inst.label);
      record["split"] = to_string(inst.split);
      record["audio_path"] = inst.audio_path;
      out << record.dump() << "\n";
    }
    if (!out) fail("IoFailure", "short write to " + tmp);
  }
  fs::rename(tmp, path);
}

std::vector<Instance> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("IoFailure", "cannot open " + path);
  std::vector<Instance> instances;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json record = json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.is_object())
      fail("InvalidConfig", path + ":" + std::to_string(line_no) + ": not a JSON record");
    Instance inst;
    try {
      inst.instance_id = record.at("instance_id").get<std::string>();
      inst.dialog_id = record.at("dialog_id").get<std::string>();
      std::string channel = record.at("channel").get<std::string>();
      if (channel.size() != 1) fail("InvalidConfig", "channel must be one character");
      inst.channel = channel[0];
      inst.speaker_id = record.at("speaker_id").get<std::string>();
      inst.listener_id = record.at("listener_id").get<std::string>();
      inst.t_ms = record.at("t_ms").get<double>();
      inst.label = label_from_string(record.at("label").get<std::string>());
      inst.split = split_from_string(record.at("split").get<std::string>());
      inst.audio_path = record.at("audio_path").get<std::string>();
    } catch (const json::exception& e) {
      fail("InvalidConfig", path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    instances.push_back(std::move(inst));
  }
  return instances;
}

Dataset synth_dataset(const SynthConfig& config) {
  if (config.n_instances < 30)
    fail("InvalidConfig", "synth corpus needs at least 30 instances");
  if (config.n_listeners < 1 || config.n_speakers < 1)
    fail("InvalidConfig", "synth corpus needs at least one listener and one speaker");
  if (config.n_frames < 1) fail("InvalidConfig", "n_frames must be >= 1");
  if (config.noise < 0.0) fail("InvalidConfig", "noise must be >= 0");
  if (config.instances_per_dialog < 1)
    fail("InvalidConfig", "instances_per_dialog must be >= 1");
  if (config.train_frac < 0.0 || config.dev_frac < 0.0 ||
      config.train_frac + config.dev_frac > 1.0)
    fail("InvalidConfig", "split fractions must be nonnegative and sum to at most 1");

  Rng rng(split_seed(config.seed, "synth"));
  std::array<Matrix, 3> prototypes;
  for (auto& proto : prototypes) proto = rng.matrix(config.n_frames, kNumCoeffs, -1.0, 1.0);

  std::size_t n_dialogs =
      (config.n_instances + config.instances_per_dialog - 1) / config.instances_per_dialog;
  Dataset data;
  data.instances.reserve(config.n_instances);
  data.windows.reserve(config.n_instances);
  std::vector<std::string> dialog_ids;
  char id_buf[64];
  for (std::size_t d = 0; d < n_dialogs && data.instances.size() < config.n_instances; ++d) {
    std::snprintf(id_buf, sizeof id_buf, "dlg%04zu", d);
    std::string dialog_id(id_buf);
    dialog_ids.push_back(dialog_id);
    std::size_t listener_idx = rng.index(static_cast<std::size_t>(config.n_listeners));
    std::size_t speaker_idx = rng.index(static_cast<std::size_t>(config.n_speakers));
    for (std::size_t i = 0;
         i < config.instances_per_dialog && data.instances.size() < config.n_instances; ++i) {
      std::size_t proto_idx;
      Label label;
      if (config.rule == SynthRule::AudioOnly) {
        double u = rng.uniform01();
        proto_idx = u < 0.5 ? 0 : u < 0.75 ? 1 : 2;
        label = static_cast<Label>(proto_idx);
      } else {
        proto_idx = rng.index(3);
        label = static_cast<Label>((proto_idx + listener_idx) % 3);
      }
      Matrix window = prototypes[proto_idx];
      if (config.noise > 0.0)
        window += rng.normal_matrix(config.n_frames, kNumCoeffs, config.noise);

      Instance inst;
      std::snprintf(id_buf, sizeof id_buf, "synth-%06zu", data.instances.size());
      inst.instance_id = id_buf;
      inst.dialog_id = dialog_id;
      inst.channel = 'A';
      std::snprintf(id_buf, sizeof id_buf, "S%03zu", speaker_idx);
      inst.speaker_id = id_buf;
      std::snprintf(id_buf, sizeof id_buf, "L%03zu", listener_idx);
      inst.listener_id = id_buf;
      inst.t_ms = 5000.0 + static_cast<double>(i) * 3000.0;
      inst.label = label;
      data.instances.push_back(std::move(inst));
      data.windows.push_back(std::move(window));
    }
  }

  std::size_t n_train = static_cast<std::size_t>(
      std::lround(config.train_frac * static_cast<double>(dialog_ids.size())));
  std::size_t n_dev = static_cast<std::size_t>(
      std::lround(config.dev_frac * static_cast<double>(dialog_ids.size())));
  n_train = std::min(n_train, dialog_ids.size());
  n_dev = std::min(n_dev, dialog_ids.size() - n_train);
  auto split_of = split_conversations(
      dialog_ids, {n_train, n_dev, dialog_ids.size() - n_train - n_dev});
  for (Instance& inst : data.instances) inst.split = split_of.at(inst.dialog_id);
  return data;
}

void write_dataset(const Dataset& dataset, const std::string& dir,
                   const std::string& meta_comment) {
  if (dataset.instances.size() != dataset.windows.size())
    fail("SizeMismatch", "dataset instances and windows differ in length");
  fs::create_directories(fs::path(dir) / "windows");
  std::vector<Instance> instances = dataset.instances;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    std::string rel = "windows/" + instances[i].instance_id + ".bcmf";
    cache_write((fs::path(dir) / rel).string(), dataset.windows[i]);
    instances[i].audio_path = rel;
  }
  write_manifest((fs::path(dir) / "manifest.jsonl").string(), instances);
  write_stats_csv((fs::path(dir) / "stats.csv").string(), corpus_stats(instances), meta_comment);
}

Dataset load_dataset(const std::string& manifest_path, int n_frames) {
  Dataset data;
  data.instances = read_manifest(manifest_path);
  fs::path base = fs::path(manifest_path).parent_path();
  std::unordered_map<std::string, Matrix> sequences;
  data.windows.reserve(data.instances.size());
  for (const Instance& inst : data.instances) {
    if (inst.audio_path.empty())
      fail("MissingInput", inst.instance_id + " has no audio_path");
    fs::path path(inst.audio_path);
    if (path.is_relative()) path = base / path;
    std::string key = path.string();
    auto it = sequences.find(key);
    if (it == sequences.end()) {
      Matrix seq;
      if (path.extension() == ".bcmf") {
        seq = cache_read(key);
      } else if (path.extension() == ".wav") {
        seq = mfcc(read_wav(key));
      } else {
        fail("InvalidConfig", inst.instance_id + ": unsupported audio_path " + inst.audio_path);
      }
      it = sequences.emplace(key, std::move(seq)).first;
    }
    data.windows.push_back(extract_window(it->second, inst.t_ms, n_frames).values);
  }
  return data;
}

Dataset truncate_windows(const Dataset& data, int n_frames) {
  Dataset out;
  out.instances = data.instances;
  out.windows.reserve(data.windows.size());
  for (const Matrix& window : data.windows) {
    if (window.rows() < n_frames)
      fail("InvalidConfig", "window of " + std::to_string(window.rows()) +
                                " frames cannot be cut to " + std::to_string(n_frames));
    out.windows.push_back(window.bottomRows(n_frames));
  }
  return out;
}

}  // namespace bcp
