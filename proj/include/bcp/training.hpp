#pragma once

#include <bcp/analysis.hpp>
#include <bcp/corpus.hpp>
#include <bcp/model.hpp>

#include <string>
#include <vector>

namespace bcp {

struct TrainConfig {
  ModelConfig model;
  double lr = 0.01;
  double momentum = 0.9;
  int batch_size = 32;
  int max_epochs = 100;
  int patience = 5;
  std::uint64_t seed = 1;
};

// Stable textual form of a configuration; hashing it names a run.
std::string config_canonical(const TrainConfig& config);
std::string config_hash(const TrainConfig& config);

struct EpochStats {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_accuracy = 0.0;
  double dev_macro_f1 = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  int best_epoch = 0;
  std::string stop_reason;  // "patience" or "max_epochs"
};

struct TrainResult {
  ModelParams params;  // weights from the best epoch
  TrainHistory history;
};

// Minibatch SGD with momentum on the train split, selecting the epoch with the
// best dev macro F1 (ties keep the earliest). Interlocutor ids are collected
// from the whole dataset so unseen-in-train ids still resolve at eval time.
TrainResult train(const TrainConfig& config, const Dataset& data);

struct GridRanges {
  std::vector<int> filter_widths{10, 11, 12};
  std::vector<int> n_filters{16, 32, 64, 128};
  std::vector<double> dropout_rates{0.1, 0.3, 0.5};
  std::vector<int> n_frames{48, 98, 148, 198};
  std::vector<int> head_hidden{16, 32, 64, 128};
};

// Cartesian product in declaration order, filter width outermost. Each entry
// carries a single filter width.
std::vector<TrainConfig> enumerate_grid(const TrainConfig& base, const GridRanges& ranges);

struct GridResult {
  int index = -1;  // position in enumeration order
  TrainConfig config;
  double dev_macro_f1 = 0.0;
  double dev_accuracy = 0.0;
  int best_epoch = 0;
  std::string checkpoint_path;
};

// Trains every grid point, writes one checkpoint per run into out_dir and
// returns results ranked by dev macro F1, then dev accuracy, then enumeration
// order. n_threads > 1 spreads runs over worker threads; results and artifacts
// do not depend on the thread count.
std::vector<GridResult> grid_search(const TrainConfig& base, const GridRanges& ranges,
                                    const Dataset& data, const std::string& out_dir,
                                    int n_threads = 1);

// Ranked results as CSV, one row per run.
void write_grid_csv(const std::string& path, const std::vector<GridResult>& results,
                    const std::string& meta_comment);

}  // namespace bcp
