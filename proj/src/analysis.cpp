#include <bcp/analysis.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace bcp {

namespace {

constexpr int kNumClasses = 3;

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt_px(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* kPalette[] = {"#4477aa", "#ee6677", "#228833", "#ccbb44",
                          "#66ccee", "#aa3377", "#bbbbbb", "#222222"};
constexpr int kPaletteLen = 8;

constexpr double kSvgW = 640.0, kSvgH = 480.0, kMargin = 48.0;

std::string svg_open() {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSvgW << "\" height=\"" << kSvgH
      << "\" viewBox=\"0 0 " << kSvgW << " " << kSvgH << "\">\n"
      << "<rect width=\"" << kSvgW << "\" height=\"" << kSvgH << "\" fill=\"white\"/>\n"
      << "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kSvgH - kMargin << "\" x2=\"" << kSvgW - kMargin
      << "\" y2=\"" << kSvgH - kMargin << "\"/>\n"
      << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\""
      << kSvgH - kMargin << "\"/>\n"
      << "</g>\n";
  return out.str();
}

struct AxisScale {
  double lo = 0.0, hi = 1.0;
  double px_lo = 0.0, px_hi = 1.0;
  double at(double v) const { return px_lo + (v - lo) / (hi - lo) * (px_hi - px_lo); }
};

AxisScale make_scale(double lo, double hi, double px_lo, double px_hi) {
  if (hi <= lo) {
    lo -= 1.0;
    hi += 1.0;
  } else {
    double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  return {lo, hi, px_lo, px_hi};
}

}  // namespace

Metrics compute_metrics(const std::vector<int>& gold, const std::vector<int>& pred) {
  if (gold.size() != pred.size())
    fail("SizeMismatch", "metrics: " + std::to_string(gold.size()) + " gold labels vs " +
                             std::to_string(pred.size()) + " predictions");
  Metrics m;
  m.confusion = Matrix::Zero(kNumClasses, kNumClasses);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= kNumClasses || pred[i] < 0 || pred[i] >= kNumClasses)
      fail("IndexOutOfRange", "metrics: label outside 0..2 at position " + std::to_string(i));
    m.confusion(gold[i], pred[i]) += 1.0;
  }
  double total = static_cast<double>(gold.size());
  m.accuracy = total > 0.0 ? m.confusion.trace() / total : 0.0;
  m.precision = Vector::Zero(kNumClasses);
  m.recall = Vector::Zero(kNumClasses);
  m.f1 = Vector::Zero(kNumClasses);
  for (int c = 0; c < kNumClasses; ++c) {
    double tp = m.confusion(c, c);
    double col = m.confusion.col(c).sum();
    double row = m.confusion.row(c).sum();
    m.precision(c) = col > 0.0 ? tp / col : 0.0;
    m.recall(c) = row > 0.0 ? tp / row : 0.0;
    double pr = m.precision(c) + m.recall(c);
    m.f1(c) = pr > 0.0 ? 2.0 * m.precision(c) * m.recall(c) / pr : 0.0;
  }
  m.macro_f1 = m.f1.mean();
  return m;
}

int argmax_class(const Vector& probs) {
  if (probs.size() == 0) fail("EmptyMap", "argmax of an empty vector");
  int best = 0;
  for (Index i = 1; i < probs.size(); ++i)
    if (probs(i) > probs(best)) best = static_cast<int>(i);
  return best;
}

EvalResult evaluate(const ModelParams& params, const Dataset& data, Split split) {
  if (data.instances.size() != data.windows.size())
    fail("SizeMismatch", "dataset: " + std::to_string(data.instances.size()) + " instances vs " +
                             std::to_string(data.windows.size()) + " windows");
  EvalResult result;
  std::vector<Vector> prob_rows;
  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    const Instance& inst = data.instances[i];
    if (inst.split != split) continue;
    Vector probs = model_forward(params, data.windows[i], inst.speaker_id, inst.listener_id,
                                 Mode::Eval);
    result.instance_ids.push_back(inst.instance_id);
    result.gold.push_back(static_cast<int>(inst.label));
    result.pred.push_back(argmax_class(probs));
    result.mean_loss += cross_entropy(probs, static_cast<int>(inst.label));
    prob_rows.push_back(std::move(probs));
  }
  if (prob_rows.empty())
    fail("EmptySplit", std::string("no instances in split ") + to_string(split));
  result.mean_loss /= static_cast<double>(prob_rows.size());
  result.probs.resize(static_cast<Index>(prob_rows.size()), kNumClasses);
  for (std::size_t i = 0; i < prob_rows.size(); ++i)
    result.probs.row(static_cast<Index>(i)) = prob_rows[i].transpose();
  result.metrics = compute_metrics(result.gold, result.pred);
  return result;
}

std::vector<ListenerScore> per_listener_f1(const ModelParams& params, const Dataset& data,
                                           Split split) {
  if (!variant_uses_listener(params.cfg.variant))
    fail("VariantWithoutListener",
         std::string("variant ") + to_string(params.cfg.variant) + " has no listener input");
  if (data.instances.size() != data.windows.size())
    fail("SizeMismatch", "dataset: instances and windows differ in length");

  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.instances.size(); ++i)
    if (data.instances[i].split == split) rows.push_back(i);
  if (rows.empty()) fail("EmptySplit", std::string("no instances in split ") + to_string(split));

  std::vector<ListenerScore> scores;
  for (const std::string& forced : params.listener.ids) {
    std::vector<int> gold, pred;
    for (std::size_t i : rows) {
      const Instance& inst = data.instances[i];
      Vector probs = model_forward(params, data.windows[i], inst.speaker_id, forced, Mode::Eval);
      gold.push_back(static_cast<int>(inst.label));
      pred.push_back(argmax_class(probs));
    }
    scores.push_back({forced, compute_metrics(gold, pred).macro_f1});
  }
  return scores;
}

Pca2d pca_2d(const Matrix& rows) {
  if (rows.rows() < 2 || rows.cols() < 2)
    fail("DegenerateData", "pca needs at least two rows and two columns, got " +
                               std::to_string(rows.rows()) + "x" + std::to_string(rows.cols()));
  Pca2d result;
  result.mean = rows.colwise().mean().transpose();
  Matrix centered = rows.rowwise() - result.mean.transpose();
  Matrix cov = centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Matrix> solver(cov);
  if (solver.info() != Eigen::Success) fail("DegenerateData", "eigen decomposition failed");

  Index d = rows.cols();
  result.components.resize(d, 2);
  result.eigenvalues.resize(2);
  for (int c = 0; c < 2; ++c) {
    Index src = d - 1 - c;  // solver sorts ascending
    Vector comp = solver.eigenvectors().col(src);
    Index peak;
    comp.cwiseAbs().maxCoeff(&peak);
    if (comp(peak) < 0.0) comp = -comp;
    result.components.col(c) = comp;
    result.eigenvalues(c) = solver.eigenvalues()(src);
  }
  result.projected = centered * result.components;
  return result;
}

std::array<int, kHistogramBins> f1_histogram(const std::vector<double>& scores) {
  std::array<int, kHistogramBins> bins{};
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0 || s > 1.0)
      fail("OutOfRangeScore", "score " + fmt_g(s) + " outside [0, 1]");
    int bin = std::min(static_cast<int>(s * kHistogramBins), kHistogramBins - 1);
    bins[static_cast<std::size_t>(bin)] += 1;
  }
  return bins;
}

void write_metrics_csv(const std::string& path, const Metrics& metrics,
                       const std::string& meta_comment) {
  const char* names[kNumClasses] = {"NO_BC", "YEAH", "UH_HUH"};
  std::ostringstream out;
  if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
  out << "metric,class,value\n";
  out << "accuracy,," << fmt_g(metrics.accuracy) << "\n";
  for (int c = 0; c < kNumClasses; ++c)
    out << "precision," << names[c] << ',' << fmt_g(metrics.precision(c)) << "\n";
  for (int c = 0; c < kNumClasses; ++c)
    out << "recall," << names[c] << ',' << fmt_g(metrics.recall(c)) << "\n";
  for (int c = 0; c < kNumClasses; ++c)
    out << "f1," << names[c] << ',' << fmt_g(metrics.f1(c)) << "\n";
  out << "macro_f1,," << fmt_g(metrics.macro_f1) << "\n";
  for (int g = 0; g < kNumClasses; ++g)
    for (int p = 0; p < kNumClasses; ++p)
      out << "confusion," << names[g] << ':' << names[p] << ','
          << static_cast<long long>(metrics.confusion(g, p)) << "\n";
  write_text(path, out.str());
}

void write_listener_csv(const std::string& path, const std::vector<ListenerScore>& scores,
                        const std::string& meta_comment) {
  std::ostringstream out;
  if (!meta_comment.empty()) out << "# " << meta_comment << "\n";
  out << "listener_id,macro_f1\n";
  for (const ListenerScore& s : scores) out << s.listener_id << ',' << fmt_g(s.macro_f1) << "\n";
  write_text(path, out.str());
}

std::string svg_scatter(const Matrix& points, const std::vector<int>& classes,
                        const std::vector<std::string>& class_names) {
  if (points.rows() != static_cast<Index>(classes.size()))
    fail("SizeMismatch", "scatter: point and class counts differ");
  if (points.rows() > 0 && points.cols() != 2)
    fail("DimensionMismatch", "scatter expects two columns");
  std::ostringstream out;
  out << svg_open();
  if (points.rows() > 0) {
    AxisScale x = make_scale(points.col(0).minCoeff(), points.col(0).maxCoeff(), kMargin,
                             kSvgW - kMargin);
    AxisScale y = make_scale(points.col(1).minCoeff(), points.col(1).maxCoeff(), kSvgH - kMargin,
                             kMargin);
    for (Index i = 0; i < points.rows(); ++i) {
      int cls = classes[static_cast<std::size_t>(i)];
      out << "<circle cx=\"" << fmt_px(x.at(points(i, 0))) << "\" cy=\""
          << fmt_px(y.at(points(i, 1))) << "\" r=\"3\" fill=\"" << kPalette[cls % kPaletteLen]
          << "\"/>\n";
    }
    int n_classes = 0;
    for (int cls : classes) n_classes = std::max(n_classes, cls + 1);
    for (int cls = 0; cls < n_classes; ++cls) {
      double sx = 0.0, sy = 0.0;
      int n = 0;
      for (Index i = 0; i < points.rows(); ++i) {
        if (classes[static_cast<std::size_t>(i)] != cls) continue;
        sx += points(i, 0);
        sy += points(i, 1);
        ++n;
      }
      if (n == 0) continue;
      double cx = x.at(sx / n), cy = y.at(sy / n);
      out << "<path class=\"centroid\" stroke=\"" << kPalette[cls % kPaletteLen]
          << "\" stroke-width=\"2\" fill=\"none\" d=\"M" << fmt_px(cx - 6) << ' ' << fmt_px(cy)
          << " H" << fmt_px(cx + 6) << " M" << fmt_px(cx) << ' ' << fmt_px(cy - 6) << " V"
          << fmt_px(cy + 6) << "\"/>\n";
      if (cls < static_cast<int>(class_names.size()))
        out << "<text x=\"" << fmt_px(cx + 8) << "\" y=\"" << fmt_px(cy - 8)
            << "\" font-size=\"12\">" << xml_escape(class_names[static_cast<std::size_t>(cls)])
            << "</text>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

std::string svg_histogram(const std::array<int, kHistogramBins>& bins) {
  std::ostringstream out;
  out << svg_open();
  int peak = *std::max_element(bins.begin(), bins.end());
  if (peak > 0) {
    double plot_w = kSvgW - 2.0 * kMargin;
    double plot_h = kSvgH - 2.0 * kMargin;
    double bar_w = plot_w / kHistogramBins;
    for (int b = 0; b < kHistogramBins; ++b) {
      double h = plot_h * bins[static_cast<std::size_t>(b)] / peak;
      if (h <= 0.0) continue;
      out << "<rect class=\"bar\" x=\"" << fmt_px(kMargin + b * bar_w) << "\" y=\""
          << fmt_px(kSvgH - kMargin - h) << "\" width=\"" << fmt_px(bar_w * 0.9)
          << "\" height=\"" << fmt_px(h) << "\" fill=\"" << kPalette[0] << "\"/>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.size() == 1) return sorted[0];
  double pos = q * static_cast<double>(sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

}  // namespace

std::string svg_boxplot(const std::vector<std::string>& labels,
                        const std::vector<std::vector<double>>& groups) {
  if (labels.size() != groups.size())
    fail("SizeMismatch", "boxplot: label and group counts differ");
  std::ostringstream out;
  out << svg_open();
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const auto& g : groups) {
    for (double v : g) {
      if (!any) {
        lo = hi = v;
        any = true;
      } else {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
  }
  if (any) {
    AxisScale y = make_scale(lo, hi, kSvgH - kMargin, kMargin);
    double slot = (kSvgW - 2.0 * kMargin) / static_cast<double>(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      double cx = kMargin + slot * (static_cast<double>(g) + 0.5);
      out << "<text x=\"" << fmt_px(cx) << "\" y=\"" << fmt_px(kSvgH - kMargin + 16)
          << "\" font-size=\"12\" text-anchor=\"middle\">" << xml_escape(labels[g]) << "</text>\n";
      if (groups[g].empty()) continue;
      std::vector<double> sorted = groups[g];
      std::sort(sorted.begin(), sorted.end());
      double q1 = quantile(sorted, 0.25), med = quantile(sorted, 0.5), q3 = quantile(sorted, 0.75);
      double box_w = slot * 0.5;
      out << "<line stroke=\"black\" x1=\"" << fmt_px(cx) << "\" y1=\""
          << fmt_px(y.at(sorted.front())) << "\" x2=\"" << fmt_px(cx) << "\" y2=\""
          << fmt_px(y.at(sorted.back())) << "\"/>\n";
      out << "<rect class=\"box\" x=\"" << fmt_px(cx - box_w / 2) << "\" y=\""
          << fmt_px(y.at(q3)) << "\" width=\"" << fmt_px(box_w) << "\" height=\""
          << fmt_px(y.at(q1) - y.at(q3)) << "\" fill=\"" << kPalette[0]
          << "\" fill-opacity=\"0.4\" stroke=\"black\"/>\n";
      out << "<line stroke=\"black\" stroke-width=\"2\" x1=\"" << fmt_px(cx - box_w / 2)
          << "\" y1=\"" << fmt_px(y.at(med)) << "\" x2=\"" << fmt_px(cx + box_w / 2) << "\" y2=\""
          << fmt_px(y.at(med)) << "\"/>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("IoFailure", "cannot open " + tmp + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail("IoFailure", "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace bcp
