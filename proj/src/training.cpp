#include <bcp/training.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <sstream>
#include <thread>

namespace bcp {

namespace {

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void append_kv(std::ostringstream& out, const char* key, const std::string& value) {
  out << key << '=' << value << '\n';
}

}  // namespace

std::string config_canonical(const TrainConfig& config) {
  const ModelConfig& m = config.model;
  std::ostringstream widths;
  for (std::size_t i = 0; i < m.filter_widths.size(); ++i) {
    if (i) widths << ';';
    widths << m.filter_widths[i];
  }
  std::ostringstream out;
  append_kv(out, "batch_size", std::to_string(config.batch_size));
  append_kv(out, "dropout_rate", fmt_g(m.dropout_rate));
  append_kv(out, "embedding_len", std::to_string(m.embedding_len));
  append_kv(out, "filter_widths", widths.str());
  append_kv(out, "head_hidden", std::to_string(m.head_hidden));
  append_kv(out, "lr", fmt_g(config.lr));
  append_kv(out, "max_epochs", std::to_string(config.max_epochs));
  append_kv(out, "momentum", fmt_g(config.momentum));
  append_kv(out, "n_coeffs", std::to_string(m.n_coeffs));
  append_kv(out, "n_filters", std::to_string(m.n_filters));
  append_kv(out, "n_frames", std::to_string(m.n_frames));
  append_kv(out, "patience", std::to_string(config.patience));
  append_kv(out, "pool_rows", std::to_string(m.pool_rows));
  append_kv(out, "seed", std::to_string(config.seed));
  append_kv(out, "sli_k", std::to_string(m.sli_k));
  append_kv(out, "sli_m", std::to_string(m.sli_m));
  append_kv(out, "variant", to_string(m.variant));
  return out.str();
}

std::string config_hash(const TrainConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_canonical(config))));
  return buf;
}

namespace {

void validate_train_config(const TrainConfig& config) {
  if (!(config.lr >= 0.0) || !std::isfinite(config.lr))
    fail("InvalidConfig", "learning rate must be finite and non-negative");
  if (config.momentum < 0.0 || config.momentum >= 1.0)
    fail("InvalidConfig", "momentum must lie in [0, 1)");
  if (config.batch_size < 1) fail("InvalidConfig", "batch_size must be >= 1");
  if (config.max_epochs < 1) fail("InvalidConfig", "max_epochs must be >= 1");
  if (config.patience < 1) fail("InvalidConfig", "patience must be >= 1");
}

std::vector<std::string> sorted_unique_ids(const Dataset& data, bool speakers) {
  std::set<std::string> seen;
  for (const Instance& inst : data.instances) {
    const std::string& id = speakers ? inst.speaker_id : inst.listener_id;
    if (!id.empty()) seen.insert(id);
  }
  return {seen.begin(), seen.end()};
}

struct DevScore {
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

DevScore score_dev(const ModelParams& params, const Dataset& data,
                   const std::vector<std::size_t>& dev) {
  std::vector<int> gold, pred;
  double loss = 0.0;
  for (std::size_t i : dev) {
    const Instance& inst = data.instances[i];
    Vector probs = model_forward(params, data.windows[i], inst.speaker_id, inst.listener_id,
                                 Mode::Eval);
    gold.push_back(static_cast<int>(inst.label));
    pred.push_back(argmax_class(probs));
    loss += cross_entropy(probs, static_cast<int>(inst.label));
  }
  Metrics m = compute_metrics(gold, pred);
  return {loss / static_cast<double>(dev.size()), m.accuracy, m.macro_f1};
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& data) {
  validate_train_config(config);
  if (data.instances.size() != data.windows.size())
    fail("SizeMismatch", "dataset: instances and windows differ in length");

  std::vector<std::size_t> train_idx, dev_idx;
  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    if (data.instances[i].split == Split::Train) train_idx.push_back(i);
    if (data.instances[i].split == Split::Dev) dev_idx.push_back(i);
  }
  if (train_idx.empty()) fail("EmptySplit", "no instances in split train");
  if (dev_idx.empty()) fail("EmptySplit", "no instances in split dev");

  ModelParams params = init_model(config.model, sorted_unique_ids(data, true),
                                  sorted_unique_ids(data, false), config.seed);
  Rng shuffle_rng(split_seed(config.seed, "shuffle"));
  Rng dropout_rng(split_seed(config.seed, "dropout"));

  Vector theta = pack_params(params);
  Vector velocity = Vector::Zero(theta.size());
  Vector best_theta = theta;

  TrainResult result;
  result.history.best_epoch = 0;
  double best_f1 = -1.0;
  int since_best = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(train_idx);
    double loss_sum = 0.0;
    std::size_t at = 0;
    while (at < train_idx.size()) {
      std::size_t batch_n = std::min(static_cast<std::size_t>(config.batch_size),
                                     train_idx.size() - at);
      ModelParams grads = zeros_like(params);
      for (std::size_t b = 0; b < batch_n; ++b) {
        const Instance& inst = data.instances[train_idx[at + b]];
        ForwardCache cache;
        Vector probs = model_forward(params, data.windows[train_idx[at + b]], inst.speaker_id,
                                     inst.listener_id, Mode::Train, &dropout_rng, &cache);
        loss_sum += cross_entropy(probs, static_cast<int>(inst.label));
        model_backward(params, cache, static_cast<int>(inst.label), grads);
      }
      Vector g = pack_params(grads) / static_cast<double>(batch_n);
      velocity = config.momentum * velocity - config.lr * g;
      theta += velocity;
      unpack_params(params, theta);
      at += batch_n;
    }
    double train_loss = loss_sum / static_cast<double>(train_idx.size());
    if (!std::isfinite(train_loss))
      fail("DivergedLoss", "train loss is not finite at epoch " + std::to_string(epoch));

    DevScore dev = score_dev(params, data, dev_idx);
    if (!std::isfinite(dev.loss))
      fail("DivergedLoss", "dev loss is not finite at epoch " + std::to_string(epoch));
    result.history.epochs.push_back(
        {epoch, train_loss, dev.loss, dev.accuracy, dev.macro_f1});

    if (dev.macro_f1 > best_f1) {
      best_f1 = dev.macro_f1;
      result.history.best_epoch = epoch;
      best_theta = theta;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= config.patience) {
      result.history.stop_reason = "patience";
      break;
    }
  }
  if (result.history.stop_reason.empty()) result.history.stop_reason = "max_epochs";

  unpack_params(params, best_theta);
  result.params = std::move(params);
  return result;
}

std::vector<TrainConfig> enumerate_grid(const TrainConfig& base, const GridRanges& ranges) {
  if (ranges.filter_widths.empty() || ranges.n_filters.empty() || ranges.dropout_rates.empty() ||
      ranges.n_frames.empty() || ranges.head_hidden.empty())
    fail("InvalidConfig", "every grid dimension needs at least one value");
  std::vector<TrainConfig> grid;
  for (int width : ranges.filter_widths)
    for (int filters : ranges.n_filters)
      for (double rate : ranges.dropout_rates)
        for (int frames : ranges.n_frames)
          for (int hidden : ranges.head_hidden) {
            TrainConfig cfg = base;
            cfg.model.filter_widths = {width};
            cfg.model.n_filters = filters;
            cfg.model.dropout_rate = rate;
            cfg.model.n_frames = frames;
            cfg.model.head_hidden = hidden;
            grid.push_back(std::move(cfg));
          }
  return grid;
}

std::vector<GridResult> grid_search(const TrainConfig& base, const GridRanges& ranges,
                                    const Dataset& data, const std::string& out_dir,
                                    int n_threads) {
  if (n_threads < 1) fail("InvalidConfig", "n_threads must be >= 1");
  std::filesystem::create_directories(out_dir);
  std::vector<TrainConfig> grid = enumerate_grid(base, ranges);
  std::vector<GridResult> results(grid.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= grid.size()) return;
      char name[32];
      std::snprintf(name, sizeof name, "run_%03zu.ckpt", i);
      std::string ckpt = (std::filesystem::path(out_dir) / name).string();
      int frames = grid[i].model.n_frames;
      bool matches = true;
      for (const Matrix& w : data.windows)
        if (w.rows() != frames) {
          matches = false;
          break;
        }
      TrainResult run = matches ? train(grid[i], data)
                                : train(grid[i], truncate_windows(data, frames));
      save_checkpoint(ckpt, run.params, config_hash(grid[i]));
      const TrainHistory& h = run.history;
      const EpochStats& best = h.epochs[static_cast<std::size_t>(h.best_epoch - 1)];
      results[i] = {static_cast<int>(i), grid[i],       best.dev_macro_f1,
                    best.dev_accuracy,  h.best_epoch,   ckpt};
    }
  };

  if (n_threads == 1 || grid.size() == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    int spawn = std::min<int>(n_threads, static_cast<int>(grid.size()));
    for (int t = 0; t < spawn; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  std::stable_sort(results.begin(), results.end(), [](const GridResult& a, const GridResult& b) {
    if (a.dev_macro_f1 != b.dev_macro_f1) return a.dev_macro_f1 > b.dev_macro_f1;
    if (a.dev_accuracy != b.dev_accuracy) return a.dev_accuracy > b.dev_accuracy;
    return a.index < b.index;
  });
  return results;
}

void write_grid_csv(const std::string& path, const std::vector<GridResult>& results,
                    const std::string& meta_comment) {
  std::ostringstream out;
  if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
  out << "rank,run,filter_width,n_filters,dropout_rate,n_frames,head_hidden,"
         "dev_macro_f1,dev_accuracy,best_epoch,checkpoint\n";
  for (std::size_t rank = 0; rank < results.size(); ++rank) {
    const GridResult& r = results[rank];
    const ModelConfig& m = r.config.model;
    out << rank + 1 << ',' << r.index << ',' << m.filter_widths.front() << ',' << m.n_filters
        << ',' << fmt_g(m.dropout_rate) << ',' << m.n_frames << ',' << m.head_hidden << ','
        << fmt_g(r.dev_macro_f1) << ',' << fmt_g(r.dev_accuracy) << ',' << r.best_epoch << ','
        << std::filesystem::path(r.checkpoint_path).filename().string() << "\n";
  }
  write_text(path, out.str());
}

}  // namespace bcp
