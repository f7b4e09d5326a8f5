#include <bcp/cli.hpp>

#include <bcp/analysis.hpp>
#include <bcp/corpus.hpp>
#include <bcp/features.hpp>
#include <bcp/model.hpp>
#include <bcp/training.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

namespace bcp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    fail("ConfigError", key + ": '" + value + "' is not an integer");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    fail("ConfigError", key + ": '" + value + "' is not a non-negative integer");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    fail("ConfigError", key + ": '" + value + "' is not a number");
  }
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::string item;
  for (char c : value) {
    if (c == ',' || c == ';') {
      parts.push_back(trim(item));
      item.clear();
    } else {
      item += c;
    }
  }
  parts.push_back(trim(item));
  return parts;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const std::string& part : split_list(value)) out.push_back(parse_int(key, part));
  if (out.empty()) fail("ConfigError", key + ": empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const std::string& part : split_list(value)) out.push_back(parse_double(key, part));
  if (out.empty()) fail("ConfigError", key + ": empty list");
  return out;
}

template <class T>
std::string join_list(const std::vector<T>& values, std::string (*one)(T)) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ';';
    out += one(values[i]);
  }
  return out;
}

std::string int_str(int v) { return std::to_string(v); }
std::string double_str(double v) { return fmt_g(v); }

// One named, settable, printable configuration value. The same table feeds
// config files, command-line flags, the canonical hash text and run_meta.json.
// Path-valued params stay out of the hash so artifact provenance does not
// depend on where a run happens to read or write.
struct Param {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
  bool is_path = false;
};

class ParamTable {
 public:
  void add(const std::string& key, std::function<void(const std::string&)> set,
           std::function<std::string()> get) {
    params_.push_back({key, std::move(set), std::move(get)});
  }
  void add_int(const std::string& key, int& v) {
    add(key, [&v, key](const std::string& s) { v = parse_int(key, s); },
        [&v] { return std::to_string(v); });
  }
  void add_u64(const std::string& key, std::uint64_t& v) {
    add(key, [&v, key](const std::string& s) { v = parse_u64(key, s); },
        [&v] { return std::to_string(v); });
  }
  void add_double(const std::string& key, double& v) {
    add(key, [&v, key](const std::string& s) { v = parse_double(key, s); },
        [&v] { return fmt_g(v); });
  }
  void add_string(const std::string& key, std::string& v) {
    add(key, [&v](const std::string& s) { v = s; }, [&v] { return v; });
  }
  void add_path(const std::string& key, std::string& v) {
    add_string(key, v);
    params_.back().is_path = true;
  }
  void add_bool(const std::string& key, bool& v) {
    add(key,
        [&v, key](const std::string& s) {
          if (s == "1" || s == "true" || s == "yes") {
            v = true;
          } else if (s == "0" || s == "false" || s == "no") {
            v = false;
          } else {
            fail("ConfigError", key + ": '" + s + "' is not a boolean");
          }
        },
        [&v] { return v ? "1" : "0"; });
  }
  void add_int_list(const std::string& key, std::vector<int>& v) {
    add(key, [&v, key](const std::string& s) { v = parse_int_list(key, s); },
        [&v] { return join_list(v, int_str); });
  }
  void add_double_list(const std::string& key, std::vector<double>& v) {
    add(key, [&v, key](const std::string& s) { v = parse_double_list(key, s); },
        [&v] { return join_list(v, double_str); });
  }

  void apply_file(const std::string& path) {
    for (const auto& [key, value] : read_config_file(path)) {
      Param* p = find(key);
      if (!p) fail("ConfigError", "unknown config key '" + key + "' in " + path);
      p->set(value);
    }
  }

  void register_flags(CLI::App& app) {
    for (Param& p : params_) {
      std::string flag = "--" + p.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      auto setter = p.set;
      app.add_option_function<std::string>(flag, setter)->type_name("VALUE");
    }
  }

  std::string canonical() const {
    std::vector<const Param*> sorted;
    for (const Param& p : params_)
      if (!p.is_path) sorted.push_back(&p);
    std::sort(sorted.begin(), sorted.end(),
              [](const Param* a, const Param* b) { return a->key < b->key; });
    std::string out;
    for (const Param* p : sorted) out += p->key + "=" + p->get() + "\n";
    return out;
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical())));
    return buf;
  }

  json to_json() const {
    json j = json::object();
    for (const Param& p : params_) j[p.key] = p.get();
    return j;
  }

 private:
  Param* find(const std::string& key) {
    for (Param& p : params_)
      if (p.key == key) return &p;
    return nullptr;
  }
  std::vector<Param> params_;
};

// Applies an optional --config file before CLI11 sees the flags, then parses;
// flags therefore override file values, which override defaults.
void parse_with_config(CLI::App& app, ParamTable& table, const std::vector<std::string>& args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) fail("ConfigError", "--config needs a file path");
      config_path = args[i + 1];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    }
  }
  if (!config_path.empty()) table.apply_file(config_path);

  std::string ignored;
  app.add_option("--config", ignored, "key=value config file applied before flags");
  table.register_flags(app);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    throw;
  } catch (const CLI::ParseError& e) {
    fail("ConfigError", e.what());
  }
}

void require(const std::string& value, const char* what) {
  if (value.empty()) fail("ConfigError", std::string("missing required ") + what);
}

void write_run_meta(const std::string& out_dir, const std::string& command,
                    const ParamTable& table, const std::string& config_hash,
                    const std::vector<std::string>& artifacts) {
  json j;
  j["command"] = command;
  j["config"] = table.to_json();
  j["config_hash"] = config_hash;
  j["artifacts"] = artifacts;
  j["tool"] = "bcpredict";
  write_text((fs::path(out_dir) / "run_meta.json").string(), j.dump(2) + "\n");
}

std::string meta_comment(const std::string& config_hash, std::uint64_t seed) {
  return "config_hash=" + config_hash + " seed=" + std::to_string(seed);
}

// ---------------------------------------------------------------- features

int cmd_features(const std::vector<std::string>& args) {
  std::string wav, out, manifest, out_dir;
  ParamTable table;
  table.add_path("wav", wav);
  table.add_path("out", out);
  table.add_path("manifest", manifest);
  table.add_path("out_dir", out_dir);

  CLI::App app{"Precompute frame features for wav audio"};
  parse_with_config(app, table, args);

  if (!wav.empty()) {
    require(out, "--out");
    Matrix feats = mfcc(read_wav(wav));
    cache_write(out, feats);
    std::cout << "wrote " << out << " (" << feats.rows() << "x" << feats.cols() << ")\n";
    return 0;
  }
  if (manifest.empty()) fail("ConfigError", "features needs --wav or --manifest");
  require(out_dir, "--out-dir");

  std::vector<Instance> instances = read_manifest(manifest);
  fs::path base = fs::path(manifest).parent_path();
  fs::create_directories(out_dir);

  std::map<std::string, std::string> cache_names;  // resolved wav -> cache file
  std::set<std::string> used_names;
  for (const Instance& inst : instances) {
    fs::path path(inst.audio_path);
    if (path.extension() != ".wav") continue;
    fs::path resolved = path.is_relative() ? base / path : path;
    std::string key = resolved.string();
    if (cache_names.count(key)) continue;
    std::string name = path.stem().string() + ".bcmf";
    if (!used_names.insert(name).second)
      fail("InvalidConfig", "two audio files share the name " + name +
                                "; cache files would collide");
    cache_write((fs::path(out_dir) / name).string(), mfcc(read_wav(key)));
    cache_names.emplace(key, name);
  }

  std::vector<Instance> rewritten = instances;
  for (Instance& inst : rewritten) {
    fs::path path(inst.audio_path);
    if (path.extension() != ".wav") continue;
    fs::path resolved = path.is_relative() ? base / path : path;
    inst.audio_path = cache_names.at(resolved.string());
  }
  write_manifest((fs::path(out_dir) / "manifest.jsonl").string(), rewritten);
  write_run_meta(out_dir, "features", table, table.hash(),
                 {"manifest.jsonl"});
  std::cout << "wrote " << cache_names.size() << " caches and manifest.jsonl to " << out_dir
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- annotate

struct TsvRow {
  std::string dialog;
  char channel = 'A';
  std::optional<std::string> speaker;
  double start_ms = 0.0, end_ms = 0.0;
  std::string text;
  bool bc_marked = false;
};

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == '\t') {
      cells.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  cells.push_back(cell);
  return cells;
}

std::vector<TsvRow> read_transcript(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("IoFailure", "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail("InvalidConfig", path + ": empty transcript");

  std::map<std::string, std::size_t> cols;
  std::vector<std::string> header = split_tabs(line);
  for (std::size_t i = 0; i < header.size(); ++i) cols[trim(header[i])] = i;
  for (const char* needed : {"dialog_id", "channel", "speaker_id", "start_ms", "end_ms", "text"})
    if (!cols.count(needed))
      fail("InvalidConfig", path + ": transcript header lacks column " + std::string(needed));
  bool has_mark = cols.count("bc_marked") > 0;

  std::vector<TsvRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_tabs(line);
    if (cells.size() != header.size())
      fail("InvalidConfig", path + " line " + std::to_string(line_no) + ": expected " +
                                std::to_string(header.size()) + " columns, got " +
                                std::to_string(cells.size()));
    TsvRow row;
    row.dialog = trim(cells[cols["dialog_id"]]);
    std::string channel = trim(cells[cols["channel"]]);
    if (row.dialog.empty() || channel.size() != 1)
      fail("InvalidConfig", path + " line " + std::to_string(line_no) +
                                ": dialog_id and single-letter channel required");
    row.channel = channel[0];
    std::string speaker = trim(cells[cols["speaker_id"]]);
    if (!speaker.empty()) row.speaker = speaker;
    std::string where = "line " + std::to_string(line_no);
    row.start_ms = parse_double(where, trim(cells[cols["start_ms"]]));
    row.end_ms = parse_double(where, trim(cells[cols["end_ms"]]));
    if (row.end_ms < row.start_ms)
      fail("InvalidConfig", path + " " + where + ": end_ms before start_ms");
    row.text = cells[cols["text"]];
    if (has_mark) {
      std::string mark = trim(cells[cols["bc_marked"]]);
      row.bc_marked = mark == "1" || mark == "true" || mark == "yes";
      if (!row.bc_marked && !(mark.empty() || mark == "0" || mark == "false" || mark == "no"))
        fail("InvalidConfig", path + " " + where + ": bc_marked must be boolean");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

int cmd_annotate(const std::vector<std::string>& args) {
  std::string transcript, mode, audio_dir = ".", out, lexicon_dir;
  std::uint64_t seed = 1;
  double offset_ms = 3000.0, window_ms = 2000.0;
  double train_frac = 5.0 / 7.0, dev_frac = 1.0 / 7.0;

  ParamTable table;
  table.add_path("transcript", transcript);
  table.add_string("mode", mode);
  table.add_path("audio_dir", audio_dir);
  table.add_path("out", out);
  table.add_path("lexicon_dir", lexicon_dir);
  table.add_u64("seed", seed);
  table.add_double("offset_ms", offset_ms);
  table.add_double("window_ms", window_ms);
  table.add_double("train_frac", train_frac);
  table.add_double("dev_frac", dev_frac);

  CLI::App app{"Label a transcript and emit a training manifest"};
  parse_with_config(app, table, args);
  require(transcript, "--transcript");
  require(out, "--out");
  if (mode != "swda" && mode != "geco")
    fail("ConfigError", "mode must be swda or geco, got '" + mode + "'");
  bool marked_mode = mode == "swda";

  TokenLexicon lexicon = !lexicon_dir.empty() ? TokenLexicon::load_dir(lexicon_dir)
                         : marked_mode        ? TokenLexicon::english_defaults()
                                              : TokenLexicon::german_defaults();

  std::vector<TsvRow> rows = read_transcript(transcript);
  std::vector<std::string> dialog_order;
  std::map<std::string, std::vector<const TsvRow*>> by_dialog;
  for (const TsvRow& row : rows) {
    auto [it, inserted] = by_dialog.try_emplace(row.dialog);
    if (inserted) dialog_order.push_back(row.dialog);
    it->second.push_back(&row);
  }

  std::map<std::string, std::optional<std::string>> channels;
  for (const TsvRow& row : rows) {
    std::string key = row.dialog + ":" + row.channel;
    auto [it, inserted] = channels.try_emplace(key, row.speaker);
    if (!inserted) {
      if (row.speaker && it->second && *row.speaker != *it->second)
        fail("InvalidConfig", "channel " + key + " names two speakers");
      if (row.speaker && !it->second) it->second = row.speaker;
    }
  }
  IdAssignment ids = assign_interlocutor_ids(channels, seed);
  auto speaker_of = [&](const std::string& dialog, char channel) {
    return ids.channel_to_speaker.at(dialog + ":" + channel);
  };

  std::vector<Instance> instances;
  std::size_t n_pos = 0, n_neg = 0, n_rejected = 0, n_unpaired = 0;
  std::size_t skipped_range = 0, skipped_overlap = 0;
  for (const std::string& dialog : dialog_order) {
    const auto& drows = by_dialog[dialog];
    std::set<char> dialog_channels;
    double duration = 0.0;
    for (const TsvRow* r : drows) {
      dialog_channels.insert(r->channel);
      duration = std::max(duration, r->end_ms);
    }

    std::vector<Instance> positives;
    for (const TsvRow* r : drows) {
      bool candidate;
      if (marked_mode) {
        candidate = r->bc_marked;
      } else {
        bool overlaps = false;
        for (const TsvRow* o : drows)
          if (o->channel != r->channel && o->start_ms < r->end_ms && o->end_ms > r->start_ms) {
            overlaps = true;
            break;
          }
        candidate = overlaps && geco_is_bc(r->text, r->end_ms - r->start_ms, lexicon);
      }
      if (!candidate) continue;
      if (dialog_channels.size() != 2) {
        ++n_unpaired;
        continue;
      }
      BcCategory category = categorize_bc(r->text, lexicon);
      if (category == BcCategory::Reject) {
        ++n_rejected;
        continue;
      }
      char other = *dialog_channels.begin() == r->channel ? *dialog_channels.rbegin()
                                                          : *dialog_channels.begin();
      Instance inst;
      inst.dialog_id = dialog;
      inst.channel = other;
      inst.speaker_id = speaker_of(dialog, other);
      inst.listener_id = speaker_of(dialog, r->channel);
      inst.t_ms = r->start_ms;
      inst.label = category == BcCategory::Yeah ? Label::Yeah : Label::UhHuh;
      inst.audio_path =
          (fs::path(audio_dir) / (dialog + "_" + std::string(1, other) + ".wav")).string();
      inst.instance_id = dialog + "-" + other + "-" + std::to_string(std::llround(r->start_ms));
      positives.push_back(std::move(inst));
    }
    std::sort(positives.begin(), positives.end(), [](const Instance& a, const Instance& b) {
      return a.t_ms != b.t_ms ? a.t_ms < b.t_ms : a.instance_id < b.instance_id;
    });

    NegativeSampleResult negatives =
        sample_negatives(positives, duration, offset_ms, window_ms);
    skipped_range += negatives.skipped_out_of_range;
    skipped_overlap += negatives.skipped_overlap;
    n_pos += positives.size();
    n_neg += negatives.negatives.size();
    for (Instance& inst : positives) instances.push_back(std::move(inst));
    for (Instance& inst : negatives.negatives) instances.push_back(std::move(inst));
  }

  std::size_t n_dialogs = dialog_order.size();
  std::size_t n_train = static_cast<std::size_t>(std::llround(train_frac * n_dialogs));
  std::size_t n_dev = static_cast<std::size_t>(std::llround(dev_frac * n_dialogs));
  if (n_train + n_dev > n_dialogs)
    fail("ConfigError", "train_frac and dev_frac leave no dialogs for test");
  std::map<std::string, Split> splits = split_conversations(
      dialog_order, {n_train, n_dev, n_dialogs - n_train - n_dev});
  for (Instance& inst : instances) inst.split = splits.at(inst.dialog_id);

  write_manifest(out, instances);
  std::cout << "wrote " << instances.size() << " instances (" << n_pos << " positive, " << n_neg
            << " negative) from " << n_dialogs << " dialogs to " << out << "\n"
            << "skipped: " << n_rejected << " rejected, " << n_unpaired << " unpaired, "
            << skipped_range << " out of range, " << skipped_overlap << " overlapping\n";
  return 0;
}

// ---------------------------------------------------------------- synth

int cmd_synth(const std::vector<std::string>& args) {
  SynthConfig cfg;
  std::string out_dir, rule = "audio_plus_listener";
  int n_instances = static_cast<int>(cfg.n_instances);
  int instances_per_dialog = static_cast<int>(cfg.instances_per_dialog);

  ParamTable table;
  table.add_path("out_dir", out_dir);
  table.add_string("rule", rule);
  table.add_int("n_instances", n_instances);
  table.add_int("n_listeners", cfg.n_listeners);
  table.add_int("n_speakers", cfg.n_speakers);
  table.add_u64("seed", cfg.seed);
  table.add_int("n_frames", cfg.n_frames);
  table.add_double("noise", cfg.noise);
  table.add_int("instances_per_dialog", instances_per_dialog);
  table.add_double("train_frac", cfg.train_frac);
  table.add_double("dev_frac", cfg.dev_frac);

  CLI::App app{"Generate a synthetic feature corpus"};
  parse_with_config(app, table, args);
  require(out_dir, "--out-dir");
  if (rule == "audio_only") {
    cfg.rule = SynthRule::AudioOnly;
  } else if (rule == "audio_plus_listener") {
    cfg.rule = SynthRule::AudioPlusListener;
  } else {
    fail("ConfigError", "rule must be audio_only or audio_plus_listener, got '" + rule + "'");
  }
  if (n_instances < 1 || instances_per_dialog < 1)
    fail("ConfigError", "n_instances and instances_per_dialog must be positive");
  cfg.n_instances = static_cast<std::size_t>(n_instances);
  cfg.instances_per_dialog = static_cast<std::size_t>(instances_per_dialog);

  Dataset data = synth_dataset(cfg);
  std::string hash = table.hash();
  write_dataset(data, out_dir, meta_comment(hash, cfg.seed));
  write_run_meta(out_dir, "synth", table, hash,
                 {"manifest.jsonl", "stats.csv", "windows"});
  std::cout << "wrote " << data.instances.size() << " instances to " << out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

// Model keys that stay fixed during a grid search; the searched dimensions
// (widths, filters, dropout, frames, hidden) are registered per command.
void add_model_params(ParamTable& table, ModelConfig& model, std::string& variant) {
  table.add_string("variant", variant);
  table.add_int("pool_rows", model.pool_rows);
  table.add_int("n_coeffs", model.n_coeffs);
  table.add_int("embedding_len", model.embedding_len);
  table.add_int("sli_k", model.sli_k);
  table.add_int("sli_m", model.sli_m);
}

void add_train_params(ParamTable& table, TrainConfig& cfg) {
  table.add_double("lr", cfg.lr);
  table.add_double("momentum", cfg.momentum);
  table.add_int("batch_size", cfg.batch_size);
  table.add_int("max_epochs", cfg.max_epochs);
  table.add_int("patience", cfg.patience);
  table.add_u64("seed", cfg.seed);
}

void write_history_csv(const std::string& path, const TrainHistory& history,
                       const std::string& comment) {
  std::ostringstream out;
  out << "# " << comment << "\n";
  out << "epoch,train_loss,dev_loss,dev_accuracy,dev_macro_f1\n";
  for (const EpochStats& e : history.epochs)
    out << e.epoch << ',' << fmt_g(e.train_loss) << ',' << fmt_g(e.dev_loss) << ','
        << fmt_g(e.dev_accuracy) << ',' << fmt_g(e.dev_macro_f1) << "\n";
  write_text(path, out.str());
}

int cmd_train(const std::vector<std::string>& args) {
  TrainConfig cfg;
  std::string manifest, out_dir, variant = "ac";
  ParamTable table;
  table.add_path("manifest", manifest);
  table.add_path("out_dir", out_dir);
  add_model_params(table, cfg.model, variant);
  table.add_int_list("filter_widths", cfg.model.filter_widths);
  table.add_int("n_filters", cfg.model.n_filters);
  table.add_int("n_frames", cfg.model.n_frames);
  table.add_int("head_hidden", cfg.model.head_hidden);
  table.add_double("dropout_rate", cfg.model.dropout_rate);
  add_train_params(table, cfg);

  CLI::App app{"Train one model on a manifest"};
  parse_with_config(app, table, args);
  require(manifest, "--manifest");
  require(out_dir, "--out-dir");
  cfg.model.variant = variant_from_string(variant);

  Dataset data = load_dataset(manifest, cfg.model.n_frames);
  TrainResult result = train(cfg, data);
  std::string hash = config_hash(cfg);
  std::string comment = meta_comment(hash, cfg.seed);

  fs::create_directories(out_dir);
  save_checkpoint((fs::path(out_dir) / "model.ckpt").string(), result.params, hash);
  write_history_csv((fs::path(out_dir) / "history.csv").string(), result.history, comment);
  EvalResult dev = evaluate(result.params, data, Split::Dev);
  write_metrics_csv((fs::path(out_dir) / "dev_metrics.csv").string(), dev.metrics, comment);
  write_run_meta(out_dir, "train", table, hash,
                 {"model.ckpt", "history.csv", "dev_metrics.csv"});

  std::cout << "best epoch " << result.history.best_epoch << "/" << result.history.epochs.size()
            << " dev_macro_f1 " << fmt_g(dev.metrics.macro_f1) << " ("
            << result.history.stop_reason << ")\n";
  return 0;
}

// ---------------------------------------------------------------- grid

template <class T>
void check_subset(const std::string& key, const std::vector<T>& chosen,
                  const std::vector<T>& allowed) {
  for (const T& v : chosen)
    if (std::find(allowed.begin(), allowed.end(), v) == allowed.end())
      fail("ConfigError", key + ": value outside the supported search grid");
}

int cmd_grid(const std::vector<std::string>& args) {
  TrainConfig base;
  GridRanges ranges;
  std::string manifest, out_dir, variant = "ac";

  ParamTable table;
  table.add_path("manifest", manifest);
  table.add_path("out_dir", out_dir);
  add_model_params(table, base.model, variant);
  add_train_params(table, base);
  table.add_int_list("widths", ranges.filter_widths);
  table.add_int_list("filters", ranges.n_filters);
  table.add_double_list("dropouts", ranges.dropout_rates);
  table.add_int_list("frames", ranges.n_frames);
  table.add_int_list("hiddens", ranges.head_hidden);

  CLI::App app{"Hyperparameter search over the supported grid"};
  parse_with_config(app, table, args);
  require(manifest, "--manifest");
  require(out_dir, "--out-dir");
  base.model.variant = variant_from_string(variant);

  GridRanges allowed;
  check_subset("widths", ranges.filter_widths, allowed.filter_widths);
  check_subset("filters", ranges.n_filters, allowed.n_filters);
  check_subset("dropouts", ranges.dropout_rates, allowed.dropout_rates);
  check_subset("frames", ranges.n_frames, allowed.n_frames);
  check_subset("hiddens", ranges.head_hidden, allowed.head_hidden);

  int max_frames = *std::max_element(ranges.n_frames.begin(), ranges.n_frames.end());
  Dataset data = load_dataset(manifest, max_frames);
  int n_threads = threads_from_env();
  std::vector<GridResult> results = grid_search(base, ranges, data, out_dir, n_threads);

  std::string hash = table.hash();
  write_grid_csv((fs::path(out_dir) / "grid_results.csv").string(), results,
                 meta_comment(hash, base.seed));
  write_run_meta(out_dir, "grid", table, hash, {"grid_results.csv"});

  const GridResult& top = results.front();
  std::cout << results.size() << " runs; best run " << top.index << " dev_macro_f1 "
            << fmt_g(top.dev_macro_f1) << " ("
            << fs::path(top.checkpoint_path).filename().string() << ")\n";
  return 0;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const std::vector<std::string>& args) {
  std::string manifest, checkpoint, split = "test", out_dir;
  bool per_listener = false;

  ParamTable table;
  table.add_path("manifest", manifest);
  table.add_path("checkpoint", checkpoint);
  table.add_string("split", split);
  table.add_path("out_dir", out_dir);
  table.add_bool("per_listener", per_listener);

  CLI::App app{"Score a checkpoint on one split"};
  parse_with_config(app, table, args);
  require(manifest, "--manifest");
  require(checkpoint, "--checkpoint");
  require(out_dir, "--out-dir");
  if (split != "train" && split != "dev" && split != "test")
    fail("ConfigError", "split must be train, dev or test, got '" + split + "'");

  ModelParams params = load_checkpoint(checkpoint);
  std::string hash = checkpoint_config_hash(checkpoint);
  Dataset data = load_dataset(manifest, params.cfg.n_frames);
  EvalResult result = evaluate(params, data, split_from_string(split));

  fs::create_directories(out_dir);
  std::string comment = "config_hash=" + hash + " split=" + split;
  std::vector<std::string> artifacts = {"metrics_" + split + ".csv"};
  write_metrics_csv((fs::path(out_dir) / artifacts[0]).string(), result.metrics, comment);

  if (per_listener) {
    std::vector<ListenerScore> scores =
        per_listener_f1(params, data, split_from_string(split));
    write_listener_csv((fs::path(out_dir) / "listener_f1.csv").string(), scores, comment);
    std::vector<double> values;
    for (const ListenerScore& s : scores) values.push_back(s.macro_f1);
    write_text((fs::path(out_dir) / "listener_f1_hist.svg").string(),
               svg_histogram(f1_histogram(values)));
    artifacts.push_back("listener_f1.csv");
    artifacts.push_back("listener_f1_hist.svg");
  }
  write_run_meta(out_dir, "eval", table, hash, artifacts);

  std::cout << "split " << split << " accuracy " << fmt_g(result.metrics.accuracy)
            << " macro_f1 " << fmt_g(result.metrics.macro_f1) << "\n";
  return 0;
}

// ---------------------------------------------------------------- embeddings

int cmd_embeddings(const std::vector<std::string>& args) {
  std::string checkpoint, which = "listener", out_dir;
  ParamTable table;
  table.add_path("checkpoint", checkpoint);
  table.add_string("which", which);
  table.add_path("out_dir", out_dir);

  CLI::App app{"Project an embedding table to two components"};
  parse_with_config(app, table, args);
  require(checkpoint, "--checkpoint");
  require(out_dir, "--out-dir");
  if (which != "speaker" && which != "listener")
    fail("ConfigError", "which must be speaker or listener, got '" + which + "'");

  ModelParams params = load_checkpoint(checkpoint);
  std::string hash = checkpoint_config_hash(checkpoint);
  const BehaviorEmbedding* emb;
  if (which == "listener") {
    if (!variant_uses_listener(params.cfg.variant))
      fail("VariantWithoutListener",
           std::string("variant ") + to_string(params.cfg.variant) + " has no listener table");
    emb = &params.listener;
  } else {
    if (!variant_uses_speaker(params.cfg.variant))
      fail("InvalidConfig",
           std::string("variant ") + to_string(params.cfg.variant) + " has no speaker table");
    emb = &params.speaker;
  }

  Pca2d pca = pca_2d(emb->table);
  fs::create_directories(out_dir);

  std::ostringstream csv;
  csv << "# config_hash=" << hash << " which=" << which << "\n";
  csv << "id,pc1,pc2\n";
  for (std::size_t i = 0; i < emb->ids.size(); ++i)
    csv << emb->ids[i] << ',' << fmt_g(pca.projected(static_cast<Index>(i), 0)) << ','
        << fmt_g(pca.projected(static_cast<Index>(i), 1)) << "\n";
  std::string csv_name = "embeddings_" + which + ".csv";
  std::string svg_name = "embeddings_" + which + ".svg";
  write_text((fs::path(out_dir) / csv_name).string(), csv.str());

  std::vector<int> classes;
  for (std::size_t i = 0; i < emb->ids.size(); ++i) classes.push_back(static_cast<int>(i));
  write_text((fs::path(out_dir) / svg_name).string(),
             svg_scatter(pca.projected, classes, emb->ids));
  write_run_meta(out_dir, "embeddings", table, hash, {csv_name, svg_name});

  std::cout << "wrote " << csv_name << " and " << svg_name << " (" << emb->ids.size()
            << " rows) to " << out_dir << "\n";
  return 0;
}

const char* kUsage =
    "usage: bcpredict <command> [flags]\n"
    "\n"
    "commands:\n"
    "  features    precompute frame features for wav audio\n"
    "  annotate    label a transcript and emit a training manifest\n"
    "  synth       generate a synthetic feature corpus\n"
    "  train       train one model on a manifest\n"
    "  grid        hyperparameter search over the supported grid\n"
    "  eval        score a checkpoint on one split\n"
    "  embeddings  project an embedding table to two components\n"
    "\n"
    "Every flag can also come from --config FILE (key=value lines, '#'\n"
    "comments); flags override the file. <command> --help lists flags.\n";

}  // namespace

std::vector<std::pair<std::string, std::string>> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("IoFailure", "cannot open config file " + path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail("ConfigError", path + " line " + std::to_string(line_no) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      fail("ConfigError", path + " line " + std::to_string(line_no) + ": empty key");
    pairs.emplace_back(std::move(key), std::move(value));
  }
  return pairs;
}

int threads_from_env() {
  const char* v = std::getenv("BCPREDICT_THREADS");
  if (!v || !*v) return 1;
  std::string s(v);
  if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 4)
    fail("ConfigError", "BCPREDICT_THREADS must be a small positive integer, got '" + s + "'");
  int n = std::stoi(s);
  if (n < 1) fail("ConfigError", "BCPREDICT_THREADS must be at least 1");
  return n;
}

int run_cli(const std::vector<std::string>& args) {
  try {
    if (args.empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
      std::cout << kUsage;
      return 0;
    }
    const std::string& cmd = args[0];
    std::vector<std::string> rest(args.begin() + 1, args.end());
    if (cmd == "features") return cmd_features(rest);
    if (cmd == "annotate") return cmd_annotate(rest);
    if (cmd == "synth") return cmd_synth(rest);
    if (cmd == "train") return cmd_train(rest);
    if (cmd == "grid") return cmd_grid(rest);
    if (cmd == "eval") return cmd_eval(rest);
    if (cmd == "embeddings") return cmd_embeddings(rest);
    fail("ConfigError", "unknown command '" + cmd +
                            "'; expected features, annotate, synth, train, grid, eval or "
                            "embeddings");
  } catch (const CLI::CallForHelp&) {
    return 0;
  } catch (const Error& e) {
    std::string message = e.what();
    std::string prefix = e.code() + ": ";
    if (message.rfind(prefix, 0) == 0) message = message.substr(prefix.size());
    json err;
    err["code"] = e.code();
    err["message"] = message;
    std::cerr << err.dump() << "\n";
    return 1;
  }
}

}  // namespace bcp
