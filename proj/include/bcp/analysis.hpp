#pragma once

#include <bcp/corpus.hpp>
#include <bcp/model.hpp>

#include <array>
#include <string>
#include <vector>

namespace bcp {

constexpr int kHistogramBins = 25;

struct Metrics {
  Matrix confusion;              // [3 x 3], rows gold, cols predicted
  double accuracy = 0.0;
  Vector precision, recall, f1;  // one entry per class
  double macro_f1 = 0.0;
};

// Precision, recall and F1 straight from confusion counts; a class that was
// never predicted and never occurs scores zero, not NaN.
Metrics compute_metrics(const std::vector<int>& gold, const std::vector<int>& pred);

// Index of the largest probability; ties go to the lowest index.
int argmax_class(const Vector& probs);

struct EvalResult {
  std::vector<std::string> instance_ids;
  std::vector<int> gold, pred;
  Matrix probs;  // [n x 3]
  double mean_loss = 0.0;
  Metrics metrics;
};

// Runs the model over every instance of one split in eval mode.
EvalResult evaluate(const ModelParams& params, const Dataset& data, Split split);

struct ListenerScore {
  std::string listener_id;
  double macro_f1 = 0.0;
};

// Macro F1 on a split when every instance is rescored with the same forced
// listener, once per known listener id. Row order follows the embedding table.
std::vector<ListenerScore> per_listener_f1(const ModelParams& params, const Dataset& data,
                                           Split split);

struct Pca2d {
  Matrix projected;   // [n x 2]
  Matrix components;  // [dim x 2], orthonormal columns
  Vector eigenvalues; // the two largest, descending
  Vector mean;        // column means of the input
};

// Two-component PCA of row vectors; the sign of each component is fixed so its
// largest-magnitude loading is positive.
Pca2d pca_2d(const Matrix& rows);

// Counts scores in [0, 1] into 25 equal bins; 1.0 lands in the last bin.
std::array<int, kHistogramBins> f1_histogram(const std::vector<double>& scores);

void write_metrics_csv(const std::string& path, const Metrics& metrics,
                       const std::string& meta_comment);
void write_listener_csv(const std::string& path, const std::vector<ListenerScore>& scores,
                        const std::string& meta_comment);

// Deterministic standalone SVG documents.
std::string svg_scatter(const Matrix& points, const std::vector<int>& classes,
                        const std::vector<std::string>& class_names);
std::string svg_histogram(const std::array<int, kHistogramBins>& bins);
std::string svg_boxplot(const std::vector<std::string>& labels,
                        const std::vector<std::vector<double>>& groups);

// Atomic whole-file write (tmp then rename).
void write_text(const std::string& path, const std::string& text);

}  // namespace bcp
