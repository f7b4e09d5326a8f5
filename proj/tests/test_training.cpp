#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <bcp/training.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace bcp;
namespace fs = std::filesystem;

namespace {

Dataset small_corpus(SynthRule rule, std::size_t n_instances, std::uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.rule = rule;
  cfg.n_instances = n_instances;
  cfg.n_speakers = 3;
  cfg.n_frames = 12;
  cfg.seed = seed;
  return synth_dataset(cfg);
}

TrainConfig small_train(Variant v) {
  TrainConfig cfg;
  cfg.model.variant = v;
  cfg.model.filter_widths = {3};
  cfg.model.n_filters = 8;
  cfg.model.pool_rows = 2;
  cfg.model.n_frames = 12;
  cfg.model.embedding_len = 3;
  cfg.model.head_hidden = 8;
  cfg.model.dropout_rate = 0.1;
  cfg.batch_size = 32;
  cfg.max_epochs = 10;
  cfg.patience = 5;
  cfg.seed = 7;
  return cfg;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const char* name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("canonical config text is stable and hashes uniquely") {
  TrainConfig cfg = small_train(Variant::AC);
  std::string text = config_canonical(cfg);
  CHECK(text.find("variant=ac\n") != std::string::npos);
  CHECK(text.find("lr=0.01\n") != std::string::npos);
  CHECK(text.find("momentum=0.9\n") != std::string::npos);
  CHECK(text.find("filter_widths=3\n") != std::string::npos);
  CHECK(text.find("n_filters=8\n") != std::string::npos);

  TrainConfig multi = cfg;
  multi.model.filter_widths = {10, 11, 12};
  CHECK(config_canonical(multi).find("filter_widths=10;11;12\n") != std::string::npos);

  std::string hash = config_hash(cfg);
  CHECK(hash.size() == 16);
  CHECK(hash.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(config_hash(cfg) == hash);
  TrainConfig other = cfg;
  other.seed = 8;
  CHECK(config_hash(other) != hash);
}

TEST_CASE("train validates configuration and splits") {
  Dataset data = small_corpus(SynthRule::AudioOnly, 70);

  TrainConfig bad_lr = small_train(Variant::AC);
  bad_lr.lr = -0.5;
  CHECK_THROWS_WITH_AS(train(bad_lr, data), doctest::Contains("InvalidConfig"), Error);

  TrainConfig bad_batch = small_train(Variant::AC);
  bad_batch.batch_size = 0;
  CHECK_THROWS_WITH_AS(train(bad_batch, data), doctest::Contains("InvalidConfig"), Error);

  TrainConfig bad_momentum = small_train(Variant::AC);
  bad_momentum.momentum = 1.0;
  CHECK_THROWS_WITH_AS(train(bad_momentum, data), doctest::Contains("InvalidConfig"), Error);

  Dataset no_dev;
  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    if (data.instances[i].split != Split::Train) continue;
    no_dev.instances.push_back(data.instances[i]);
    no_dev.windows.push_back(data.windows[i]);
  }
  CHECK_THROWS_WITH_AS(train(small_train(Variant::AC), no_dev), doctest::Contains("EmptySplit"),
                       Error);

  Dataset ragged = data;
  ragged.windows.pop_back();
  CHECK_THROWS_WITH_AS(train(small_train(Variant::AC), ragged),
                       doctest::Contains("SizeMismatch"), Error);
}

TEST_CASE("training is deterministic down to checkpoint bytes") {
  Dataset data = small_corpus(SynthRule::AudioPlusListener, 105);
  TrainConfig cfg = small_train(Variant::AC_SLI_SUM);
  cfg.max_epochs = 3;

  TrainResult a = train(cfg, data);
  TrainResult b = train(cfg, data);
  CHECK(pack_params(a.params) == pack_params(b.params));
  CHECK(a.history.best_epoch == b.history.best_epoch);
  CHECK(a.history.stop_reason == b.history.stop_reason);
  REQUIRE(a.history.epochs.size() == b.history.epochs.size());
  for (std::size_t e = 0; e < a.history.epochs.size(); ++e) {
    CHECK(a.history.epochs[e].train_loss == b.history.epochs[e].train_loss);
    CHECK(a.history.epochs[e].dev_macro_f1 == b.history.epochs[e].dev_macro_f1);
  }

  TempDir dir("bcp_train_det");
  std::string p1 = (dir.path / "a.ckpt").string();
  std::string p2 = (dir.path / "b.ckpt").string();
  save_checkpoint(p1, a.params, config_hash(cfg));
  save_checkpoint(p2, b.params, config_hash(cfg));
  CHECK(read_file(p1) == read_file(p2));

  TrainConfig reseeded = cfg;
  reseeded.seed = 8;
  TrainResult c = train(reseeded, data);
  CHECK(pack_params(a.params) != pack_params(c.params));
}

TEST_CASE("zero learning rate never moves the weights and stops on patience") {
  Dataset data = small_corpus(SynthRule::AudioOnly, 70);
  TrainConfig cfg = small_train(Variant::AC);
  cfg.lr = 0.0;
  cfg.max_epochs = 100;
  cfg.patience = 3;

  ModelParams init = init_model(cfg.model, {}, {}, cfg.seed);
  std::vector<std::string> speakers, listeners;
  for (const Instance& inst : data.instances) {
    speakers.push_back(inst.speaker_id);
    listeners.push_back(inst.listener_id);
  }

  TrainResult result = train(cfg, data);
  CHECK(result.history.best_epoch == 1);
  CHECK(result.history.stop_reason == "patience");
  CHECK(result.history.epochs.size() == 4);  // epoch 1 best, then three flat epochs
  for (std::size_t e = 1; e < result.history.epochs.size(); ++e)
    CHECK(result.history.epochs[e].dev_macro_f1 == result.history.epochs[0].dev_macro_f1);
}

TEST_CASE("the returned model is the best epoch, re-evaluable on dev") {
  Dataset data = small_corpus(SynthRule::AudioOnly, 105);
  TrainConfig cfg = small_train(Variant::AC);
  cfg.max_epochs = 6;
  cfg.model.dropout_rate = 0.0;

  TrainResult result = train(cfg, data);
  CHECK(result.history.stop_reason == "max_epochs");
  REQUIRE(result.history.best_epoch >= 1);
  const EpochStats& best =
      result.history.epochs[static_cast<std::size_t>(result.history.best_epoch - 1)];

  EvalResult dev = evaluate(result.params, data, Split::Dev);
  CHECK(dev.metrics.macro_f1 == doctest::Approx(best.dev_macro_f1).epsilon(1e-12));
  CHECK(dev.metrics.accuracy == doctest::Approx(best.dev_accuracy).epsilon(1e-12));

  double best_f1 = 0.0;
  for (const EpochStats& e : result.history.epochs) best_f1 = std::max(best_f1, e.dev_macro_f1);
  CHECK(best.dev_macro_f1 == best_f1);
}

TEST_CASE("separable audio classes are learned quickly") {
  Dataset data = small_corpus(SynthRule::AudioOnly, 210);
  TrainConfig cfg = small_train(Variant::AC);
  cfg.max_epochs = 50;
  cfg.patience = 10;

  TrainResult result = train(cfg, data);
  EvalResult dev = evaluate(result.params, data, Split::Dev);
  CHECK(dev.metrics.accuracy >= 0.95);
}

TEST_CASE("listener-aware variants beat audio alone on permuted labels") {
  Dataset data = small_corpus(SynthRule::AudioPlusListener, 210);

  // The listener path starts near zero and crosses a long plateau before the
  // interaction is learned, so give it room.
  TrainConfig ac = small_train(Variant::AC);
  ac.max_epochs = 200;
  ac.patience = 200;
  TrainConfig ac_l = ac;
  ac_l.model.variant = Variant::AC_L;

  double acc_ac = evaluate(train(ac, data).params, data, Split::Dev).metrics.accuracy;
  double acc_ac_l = evaluate(train(ac_l, data).params, data, Split::Dev).metrics.accuracy;
  CHECK(acc_ac_l > acc_ac);
  CHECK(acc_ac_l >= 0.9);
  CHECK(acc_ac <= 0.6);
}

TEST_CASE("a runaway learning rate raises DivergedLoss") {
  Dataset data = small_corpus(SynthRule::AudioOnly, 70);
  TrainConfig cfg = small_train(Variant::AC);
  cfg.model.head_hidden = 0;  // affine head, so activations are unbounded
  cfg.model.dropout_rate = 0.0;
  cfg.lr = 1e150;
  cfg.max_epochs = 5;
  CHECK_THROWS_WITH_AS(train(cfg, data), doctest::Contains("DivergedLoss"), Error);
}

TEST_CASE("grid enumeration walks the dimensions innermost-last") {
  TrainConfig base = small_train(Variant::AC);
  GridRanges ranges;  // defaults
  std::vector<TrainConfig> grid = enumerate_grid(base, ranges);
  REQUIRE(grid.size() == 576);

  CHECK(grid[0].model.filter_widths == std::vector<int>{10});
  CHECK(grid[0].model.n_filters == 16);
  CHECK(grid[0].model.dropout_rate == 0.1);
  CHECK(grid[0].model.n_frames == 48);
  CHECK(grid[0].model.head_hidden == 16);

  CHECK(grid[1].model.head_hidden == 32);        // innermost advances first
  CHECK(grid[4].model.n_frames == 98);           // then the window length
  CHECK(grid[16].model.dropout_rate == 0.3);     // then dropout
  CHECK(grid[48].model.n_filters == 32);         // then the filter count
  CHECK(grid[192].model.filter_widths == std::vector<int>{11});

  for (const TrainConfig& cfg : grid) {
    CHECK(cfg.model.filter_widths.size() == 1);
    CHECK(cfg.model.variant == Variant::AC);
    CHECK(cfg.seed == base.seed);
  }

  GridRanges empty;
  empty.n_filters.clear();
  CHECK_THROWS_WITH_AS(enumerate_grid(base, empty), doctest::Contains("InvalidConfig"), Error);
}

TEST_CASE("grid search ranks runs and writes loadable checkpoints") {
  Dataset data = small_corpus(SynthRule::AudioOnly, 70);
  TrainConfig base = small_train(Variant::AC);
  base.max_epochs = 2;

  GridRanges ranges;
  ranges.filter_widths = {3, 4};
  ranges.n_filters = {4};
  ranges.dropout_rates = {0.1};
  ranges.n_frames = {12};
  ranges.head_hidden = {4, 8};

  TempDir dir("bcp_grid_test");
  std::vector<GridResult> results = grid_search(base, ranges, data, dir.path.string());
  REQUIRE(results.size() == 4);

  for (std::size_t i = 1; i < results.size(); ++i) {
    const GridResult& a = results[i - 1];
    const GridResult& b = results[i];
    bool ordered = a.dev_macro_f1 > b.dev_macro_f1 ||
                   (a.dev_macro_f1 == b.dev_macro_f1 && a.dev_accuracy > b.dev_accuracy) ||
                   (a.dev_macro_f1 == b.dev_macro_f1 && a.dev_accuracy == b.dev_accuracy &&
                    a.index < b.index);
    CHECK(ordered);
  }

  for (const GridResult& r : results) {
    CHECK(fs::exists(r.checkpoint_path));
    ModelParams restored = load_checkpoint(r.checkpoint_path);
    CHECK(restored.cfg.head_hidden == r.config.model.head_hidden);
    CHECK(checkpoint_config_hash(r.checkpoint_path) == config_hash(r.config));
  }

  std::string csv_path = (dir.path / "grid.csv").string();
  write_grid_csv(csv_path, results, "seed=7");
  std::string text = read_file(csv_path);
  CHECK(text.rfind("# seed=7\n", 0) == 0);
  CHECK(text.find("rank,run,filter_width,") != std::string::npos);
  std::size_t rows = 0;
  for (char c : text) rows += c == '\n';
  CHECK(rows == 2 + results.size());  // comment, header, one row per run
  CHECK(text.find("1,") != std::string::npos);
}

TEST_CASE("grid search results do not depend on the worker count") {
  Dataset data = small_corpus(SynthRule::AudioOnly, 70);
  TrainConfig base = small_train(Variant::AC);
  base.max_epochs = 2;

  GridRanges ranges;
  ranges.filter_widths = {3};
  ranges.n_filters = {4, 8};
  ranges.dropout_rates = {0.1};
  ranges.n_frames = {12};
  ranges.head_hidden = {4};

  TempDir d1("bcp_grid_t1");
  TempDir d2("bcp_grid_t2");
  std::vector<GridResult> r1 = grid_search(base, ranges, data, d1.path.string(), 1);
  std::vector<GridResult> r2 = grid_search(base, ranges, data, d2.path.string(), 2);

  REQUIRE(r1.size() == r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) {
    CHECK(r1[i].index == r2[i].index);
    CHECK(r1[i].dev_macro_f1 == r2[i].dev_macro_f1);
    CHECK(r1[i].dev_accuracy == r2[i].dev_accuracy);
    std::string name = fs::path(r1[i].checkpoint_path).filename().string();
    CHECK(read_file(r1[i].checkpoint_path) == read_file((d2.path / name).string()));
  }
}

TEST_CASE("grid search cuts windows per run when frame counts differ") {
  Dataset data = small_corpus(SynthRule::AudioOnly, 70);  // 12-frame windows
  TrainConfig base = small_train(Variant::AC);
  base.max_epochs = 2;

  GridRanges ranges;
  ranges.filter_widths = {3};
  ranges.n_filters = {4};
  ranges.dropout_rates = {0.1};
  ranges.n_frames = {8, 12};
  ranges.head_hidden = {4};

  TempDir dir("bcp_grid_frames");
  std::vector<GridResult> results = grid_search(base, ranges, data, dir.path.string());
  REQUIRE(results.size() == 2);
  for (const GridResult& r : results) {
    ModelParams restored = load_checkpoint(r.checkpoint_path);
    CHECK(restored.cfg.n_frames == r.config.model.n_frames);
  }

  // the 8-frame run must match training on a dataset cut up front
  const GridResult* eight = &results[0];
  if (eight->config.model.n_frames != 8) eight = &results[1];
  TrainConfig cfg8 = base;
  cfg8.model.filter_widths = {3};
  cfg8.model.n_filters = 4;
  cfg8.model.dropout_rate = 0.1;
  cfg8.model.n_frames = 8;
  cfg8.model.head_hidden = 4;
  TrainResult direct = train(cfg8, truncate_windows(data, 8));
  CHECK(pack_params(load_checkpoint(eight->checkpoint_path)) == pack_params(direct.params));
}
