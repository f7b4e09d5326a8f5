#include <bcp/model.hpp>

#include <json.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace bcp {

using nlohmann::json;

const char* to_string(Variant v) {
  switch (v) {
    case Variant::AC: return "ac";
    case Variant::AC_S: return "ac_s";
    case Variant::AC_L: return "ac_l";
    case Variant::AC_S_L: return "ac_s_l";
    case Variant::AC_SLI_SUM: return "ac_sli_sum";
    case Variant::AC_SLI_BILINEAR: return "ac_sli_bilinear";
    case Variant::AC_SLI_NTN: return "ac_sli_ntn";
  }
  fail("InvalidConfig", "unknown variant");
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::AC, Variant::AC_S, Variant::AC_L, Variant::AC_S_L,
                    Variant::AC_SLI_SUM, Variant::AC_SLI_BILINEAR, Variant::AC_SLI_NTN})
    if (s == to_string(v)) return v;
  fail("InvalidConfig", "unknown variant '" + s + "'");
}

bool variant_uses_sli(Variant v) {
  return v == Variant::AC_SLI_SUM || v == Variant::AC_SLI_BILINEAR || v == Variant::AC_SLI_NTN;
}

bool variant_uses_speaker(Variant v) {
  return v == Variant::AC_S || v == Variant::AC_S_L || variant_uses_sli(v);
}

bool variant_uses_listener(Variant v) {
  return v == Variant::AC_L || v == Variant::AC_S_L || variant_uses_sli(v);
}

Vector sli_sum(const Vector& s, const Vector& l) {
  if (s.size() != l.size())
    fail("DimensionMismatch", "sli_sum: encoder inputs of sizes " + std::to_string(s.size()) +
                                  " and " + std::to_string(l.size()));
  return s + l;
}

namespace {

void check_bilinear(const Vector& s, const Vector& l, const SliParams& params) {
  if (s.size() != l.size()) fail("DimensionMismatch", "sli: encoder input sizes differ");
  if (params.W.empty()) fail("DimensionMismatch", "sli: no bilinear slices");
  for (const Matrix& slice : params.W)
    if (slice.rows() != s.size() || slice.cols() != s.size())
      fail("DimensionMismatch", "sli: bilinear slice shape mismatch");
}

// Bilinear core without bias: out_j = s^T W_j l.
Vector bilinear_slices(const Vector& s, const Vector& l, const SliParams& params) {
  Vector out(static_cast<Index>(params.W.size()));
  for (std::size_t j = 0; j < params.W.size(); ++j)
    out(static_cast<Index>(j)) = s.dot(params.W[j] * l);
  return out;
}

Vector ntn_forward(const Vector& s, const Vector& l, const SliParams& params, Vector* h_out) {
  check_bilinear(s, l, params);
  Index k = static_cast<Index>(params.W.size());
  Index n = s.size();
  if (params.V.rows() != k || params.V.cols() != 2 * n)
    fail("DimensionMismatch", "sli: V must be k x 2n");
  if (params.U.rows() != k)
    fail("DimensionMismatch", "sli: U must be k x m");
  if (params.b.size() != params.U.cols())
    fail("DimensionMismatch", "sli: bias must match the output width");
  Vector sl(2 * n);
  sl << s, l;
  Vector h = (bilinear_slices(s, l, params) + params.V * sl).array().tanh();
  if (h_out) *h_out = h;
  return params.U.transpose() * h + params.b;
}

}  // namespace

Vector sli_bilinear(const Vector& s, const Vector& l, const SliParams& params) {
  check_bilinear(s, l, params);
  if (params.b.size() != static_cast<Index>(params.W.size()))
    fail("DimensionMismatch", "sli: bilinear bias must have one entry per slice");
  return bilinear_slices(s, l, params) + params.b;
}

Vector sli_ntn(const Vector& s, const Vector& l, const SliParams& params) {
  return ntn_forward(s, l, params, nullptr);
}

Index feature_map_len(const ModelConfig& config) {
  Index total = 0;
  for (int w : config.filter_widths) {
    Index map_len = config.n_frames - w + 1;
    if (map_len < 1) fail("FilterTooWide", "filter width " + std::to_string(w) +
                                               " exceeds " + std::to_string(config.n_frames) +
                                               " frames");
    total += (map_len / config.pool_rows) * config.n_filters;
  }
  return total;
}

Index concat_len(const ModelConfig& config) {
  Index len = feature_map_len(config);
  if (variant_uses_sli(config.variant)) {
    switch (config.variant) {
      case Variant::AC_SLI_SUM: len += config.embedding_len; break;
      case Variant::AC_SLI_BILINEAR: len += config.sli_k; break;
      case Variant::AC_SLI_NTN: len += config.sli_m; break;
      default: break;
    }
  } else {
    if (variant_uses_speaker(config.variant)) len += config.embedding_len;
    if (variant_uses_listener(config.variant)) len += config.embedding_len;
  }
  return len;
}

namespace {

constexpr int kNumClasses = 3;

Matrix glorot(Rng& rng, Index rows, Index cols, Index fan_in, Index fan_out) {
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return rng.matrix(rows, cols, -limit, limit);
}

Affine make_affine(Rng& rng, Index out, Index in, Activation act) {
  Affine layer;
  layer.W = glorot(rng, out, in, in, out);
  layer.b = Vector::Zero(out);
  layer.act = act;
  return layer;
}

BehaviorEmbedding make_embedding(Rng& rng, const std::vector<std::string>& ids, Index len) {
  BehaviorEmbedding emb;
  emb.ids = ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto [it, inserted] = emb.index.emplace(ids[i], static_cast<Index>(i));
    if (!inserted) fail("InvalidConfig", "duplicate interlocutor id '" + ids[i] + "'");
  }
  emb.table = rng.matrix(static_cast<Index>(ids.size()), len, -0.1, 0.1);
  emb.ffn1 = make_affine(rng, len, len, Activation::Tanh);
  emb.ffn2 = make_affine(rng, len, len, Activation::Tanh);
  return emb;
}

void validate_config(const ModelConfig& config) {
  if (config.filter_widths.empty()) fail("InvalidConfig", "at least one filter width required");
  for (int w : config.filter_widths)
    if (w < 1) fail("InvalidConfig", "filter widths must be >= 1");
  if (config.n_filters < 1) fail("InvalidConfig", "n_filters must be >= 1");
  if (config.pool_rows < 1) fail("InvalidConfig", "pool_rows must be >= 1");
  if (config.n_frames < 1 || config.n_coeffs < 1)
    fail("InvalidConfig", "window shape must be positive");
  if (config.embedding_len < 1) fail("InvalidConfig", "embedding_len must be >= 1");
  if (config.sli_k < 1 || config.sli_m < 1) fail("InvalidConfig", "sli_k and sli_m must be >= 1");
  if (config.head_hidden < 0) fail("InvalidConfig", "head_hidden must be >= 0");
  if (config.dropout_rate < 0.0 || config.dropout_rate >= 1.0)
    fail("InvalidConfig", "dropout_rate must lie in [0, 1)");
  if (feature_map_len(config) < 1)
    fail("InvalidConfig", "pooling leaves no acoustic features; shrink pool_rows or widths");
}

// Width groups as consecutive runs; init_model emits filters width-major so
// each configured width forms one run.
std::vector<std::pair<std::size_t, std::size_t>> width_groups(
    const std::vector<ConvFilter>& filters) {
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= filters.size(); ++i) {
    if (i == filters.size() || filters[i].width() != filters[start].width()) {
      groups.emplace_back(start, i - start);
      start = i;
    }
  }
  return groups;
}

}  // namespace

ModelParams init_model(const ModelConfig& config, const std::vector<std::string>& speaker_ids,
                       const std::vector<std::string>& listener_ids, std::uint64_t seed) {
  validate_config(config);
  ModelParams params;
  params.cfg = config;
  params.init_seed = seed;
  Rng rng(split_seed(seed, "init"));

  for (int w : config.filter_widths) {
    for (int f = 0; f < config.n_filters; ++f) {
      ConvFilter filter;
      Index fan_in = static_cast<Index>(w) * config.n_coeffs;
      filter.weights = glorot(rng, w, config.n_coeffs, fan_in, 1);
      filter.bias = 0.0;
      params.filters.push_back(std::move(filter));
    }
  }

  if (variant_uses_speaker(config.variant)) {
    if (speaker_ids.empty()) fail("InvalidConfig", "variant needs speaker ids");
    params.speaker = make_embedding(rng, speaker_ids, config.embedding_len);
  }
  if (variant_uses_listener(config.variant)) {
    if (listener_ids.empty()) fail("InvalidConfig", "variant needs listener ids");
    params.listener = make_embedding(rng, listener_ids, config.embedding_len);
  }

  if (config.variant == Variant::AC_SLI_BILINEAR || config.variant == Variant::AC_SLI_NTN) {
    Index n = config.embedding_len;
    Index k = config.sli_k;
    for (Index j = 0; j < k; ++j) params.sli.W.push_back(glorot(rng, n, n, n, n));
    if (config.variant == Variant::AC_SLI_BILINEAR) {
      params.sli.b = Vector::Zero(k);
    } else {
      params.sli.V = glorot(rng, k, 2 * n, 2 * n, k);
      params.sli.U = glorot(rng, k, config.sli_m, k, config.sli_m);
      params.sli.b = Vector::Zero(config.sli_m);
    }
  }

  Index in_len = concat_len(config);
  if (config.head_hidden > 0) {
    params.hidden = make_affine(rng, config.head_hidden, in_len, Activation::Tanh);
    in_len = config.head_hidden;
  }
  params.output = make_affine(rng, kNumClasses, in_len, Activation::Identity);
  return params;
}

Vector acoustic_component(const Matrix& window, const std::vector<ConvFilter>& filters,
                          Index pool_rows) {
  if (filters.empty()) fail("DimensionMismatch", "acoustic_component: no filters");
  std::vector<Vector> parts;
  Index total = 0;
  for (auto [start, count] : width_groups(filters)) {
    std::vector<ConvFilter> group(filters.begin() + static_cast<std::ptrdiff_t>(start),
                                  filters.begin() + static_cast<std::ptrdiff_t>(start + count));
    parts.push_back(relu_maxpool(conv_valid(window, group), pool_rows));
    total += parts.back().size();
  }
  Vector out(total);
  Index at = 0;
  for (const Vector& part : parts) {
    out.segment(at, part.size()) = part;
    at += part.size();
  }
  return out;
}

Vector behavior_encode(const std::string& id, const BehaviorEmbedding& embedding) {
  auto it = embedding.index.find(id);
  if (it == embedding.index.end())
    fail("UnknownInterlocutor", "no embedding row for id '" + id + "'");
  Vector raw = embedding.table.row(it->second).transpose();
  return affine_forward(embedding.ffn2, affine_forward(embedding.ffn1, raw));
}

namespace {

struct EncodeCache {
  Index row;
  Vector raw, h1, enc;
};

EncodeCache encode_with_cache(const std::string& id, const BehaviorEmbedding& embedding,
                              const char* role) {
  if (id.empty())
    fail("MissingInput", std::string("variant requires a ") + role + " id");
  auto it = embedding.index.find(id);
  if (it == embedding.index.end())
    fail("UnknownInterlocutor", std::string("no embedding row for ") + role + " '" + id + "'");
  EncodeCache cache;
  cache.row = it->second;
  cache.raw = embedding.table.row(cache.row).transpose();
  cache.h1 = affine_forward(embedding.ffn1, cache.raw);
  cache.enc = affine_forward(embedding.ffn2, cache.h1);
  return cache;
}

}  // namespace

Vector model_forward(const ModelParams& params, const Matrix& window,
                     const std::string& speaker_id, const std::string& listener_id, Mode mode,
                     Rng* rng, ForwardCache* cache) {
  const ModelConfig& cfg = params.cfg;
  if (window.rows() != cfg.n_frames || window.cols() != cfg.n_coeffs)
    fail("DimensionMismatch", "window is " + std::to_string(window.rows()) + "x" +
                                  std::to_string(window.cols()) + ", model expects " +
                                  std::to_string(cfg.n_frames) + "x" +
                                  std::to_string(cfg.n_coeffs));
  ForwardCache local;
  ForwardCache& cc = cache ? *cache : local;
  cc = ForwardCache{};
  cc.window = &window;

  Index fmap_len = feature_map_len(cfg);
  cc.feature_map.resize(fmap_len);
  Index at = 0;
  for (auto [start, count] : width_groups(params.filters)) {
    std::vector<ConvFilter> group(params.filters.begin() + static_cast<std::ptrdiff_t>(start),
                                  params.filters.begin() + static_cast<std::ptrdiff_t>(start + count));
    Matrix map = conv_valid(window, group);
    Vector pooled = relu_maxpool(map, cfg.pool_rows);
    cc.conv_maps.push_back(std::move(map));
    cc.group_offsets.push_back(at);
    cc.feature_map.segment(at, pooled.size()) = pooled;
    at += pooled.size();
  }

  if (variant_uses_speaker(cfg.variant)) {
    EncodeCache e = encode_with_cache(speaker_id, params.speaker, "speaker");
    cc.speaker_row = e.row;
    cc.s_raw = std::move(e.raw);
    cc.s_h1 = std::move(e.h1);
    cc.s_enc = std::move(e.enc);
  }
  if (variant_uses_listener(cfg.variant)) {
    EncodeCache e = encode_with_cache(listener_id, params.listener, "listener");
    cc.listener_row = e.row;
    cc.l_raw = std::move(e.raw);
    cc.l_h1 = std::move(e.h1);
    cc.l_enc = std::move(e.enc);
  }

  if (variant_uses_sli(cfg.variant)) {
    switch (cfg.variant) {
      case Variant::AC_SLI_SUM: cc.sli_out = sli_sum(cc.s_enc, cc.l_enc); break;
      case Variant::AC_SLI_BILINEAR:
        cc.sli_out = sli_bilinear(cc.s_enc, cc.l_enc, params.sli);
        break;
      case Variant::AC_SLI_NTN:
        cc.sli_out = ntn_forward(cc.s_enc, cc.l_enc, params.sli, &cc.ntn_h);
        break;
      default: break;
    }
  }

  Index total = concat_len(cfg);
  cc.concat.resize(total);
  at = 0;
  cc.concat.segment(at, fmap_len) = cc.feature_map;
  at += fmap_len;
  if (variant_uses_sli(cfg.variant)) {
    cc.concat.segment(at, cc.sli_out.size()) = cc.sli_out;
  } else {
    if (variant_uses_speaker(cfg.variant)) {
      cc.concat.segment(at, cc.s_enc.size()) = cc.s_enc;
      at += cc.s_enc.size();
    }
    if (variant_uses_listener(cfg.variant)) cc.concat.segment(at, cc.l_enc.size()) = cc.l_enc;
  }

  if (mode == Mode::Train && cfg.dropout_rate > 0.0) {
    if (!rng) fail("InvalidConfig", "train-mode forward needs an rng for dropout");
    cc.dropped = dropout_masked(cc.concat, cfg.dropout_rate, mode, *rng, cc.dropout_mask);
  } else {
    cc.dropped = cc.concat;
    cc.dropout_mask = Vector::Ones(total);
  }

  const Vector& head_in = cc.dropped;
  if (cfg.head_hidden > 0) {
    cc.hidden_out = affine_forward(params.hidden, head_in);
    cc.logits = affine_forward(params.output, cc.hidden_out);
  } else {
    cc.logits = affine_forward(params.output, head_in);
  }
  cc.probs = softmax(cc.logits);
  return cc.probs;
}

namespace {

Vector affine_bwd_into(const Affine& layer, const Vector& x, const Vector& y, const Vector& d_y,
                       Affine& grad) {
  AffineGrad tmp;
  tmp.W = Matrix::Zero(layer.W.rows(), layer.W.cols());
  tmp.b = Vector::Zero(layer.b.size());
  Vector d_x = affine_backward(layer, x, y, d_y, tmp);
  grad.W += tmp.W;
  grad.b += tmp.b;
  return d_x;
}

}  // namespace

void model_backward(const ModelParams& params, const ForwardCache& cache, int gold,
                    ModelParams& grads) {
  const ModelConfig& cfg = params.cfg;
  Vector d_logits = softmax_xent_grad(cache.probs, gold);

  Vector d_dropped;
  if (cfg.head_hidden > 0) {
    Vector d_hidden = affine_bwd_into(params.output, cache.hidden_out, cache.logits, d_logits,
                                      grads.output);
    d_dropped = affine_bwd_into(params.hidden, cache.dropped, cache.hidden_out, d_hidden,
                                grads.hidden);
  } else {
    d_dropped = affine_bwd_into(params.output, cache.dropped, cache.logits, d_logits,
                                grads.output);
  }
  Vector d_concat = d_dropped.cwiseProduct(cache.dropout_mask);

  Index fmap_len = cache.feature_map.size();
  auto groups = width_groups(params.filters);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto [start, count] = groups[g];
    std::vector<ConvFilter> group(params.filters.begin() + static_cast<std::ptrdiff_t>(start),
                                  params.filters.begin() + static_cast<std::ptrdiff_t>(start + count));
    const Matrix& map = cache.conv_maps[g];
    Index pooled_len = (map.rows() / cfg.pool_rows) * map.cols();
    Vector d_pooled = d_concat.segment(cache.group_offsets[g], pooled_len);
    Matrix d_map = relu_maxpool_backward(map, cfg.pool_rows, d_pooled);
    std::vector<ConvFilter> fg = conv_valid_param_grad(*cache.window, group, d_map);
    for (std::size_t i = 0; i < count; ++i) {
      grads.filters[start + i].weights += fg[i].weights;
      grads.filters[start + i].bias += fg[i].bias;
    }
  }

  Vector d_s_enc = Vector::Zero(cfg.embedding_len);
  Vector d_l_enc = Vector::Zero(cfg.embedding_len);
  bool have_s = variant_uses_speaker(cfg.variant);
  bool have_l = variant_uses_listener(cfg.variant);

  if (variant_uses_sli(cfg.variant)) {
    Vector d_sli = d_concat.segment(fmap_len, cache.sli_out.size());
    const Vector& s = cache.s_enc;
    const Vector& l = cache.l_enc;
    switch (cfg.variant) {
      case Variant::AC_SLI_SUM:
        d_s_enc = d_sli;
        d_l_enc = d_sli;
        break;
      case Variant::AC_SLI_BILINEAR: {
        grads.sli.b += d_sli;
        for (std::size_t j = 0; j < params.sli.W.size(); ++j) {
          double g = d_sli(static_cast<Index>(j));
          grads.sli.W[j] += g * s * l.transpose();
          d_s_enc += g * (params.sli.W[j] * l);
          d_l_enc += g * (params.sli.W[j].transpose() * s);
        }
        break;
      }
      case Variant::AC_SLI_NTN: {
        const Vector& h = cache.ntn_h;
        grads.sli.U += h * d_sli.transpose();
        grads.sli.b += d_sli;
        Vector d_h = params.sli.U * d_sli;
        Vector d_pre = d_h.cwiseProduct(Vector::Ones(h.size()) - h.cwiseProduct(h));
        Index n = s.size();
        Vector sl(2 * n);
        sl << s, l;
        grads.sli.V += d_pre * sl.transpose();
        d_s_enc += params.sli.V.leftCols(n).transpose() * d_pre;
        d_l_enc += params.sli.V.rightCols(n).transpose() * d_pre;
        for (std::size_t j = 0; j < params.sli.W.size(); ++j) {
          double g = d_pre(static_cast<Index>(j));
          grads.sli.W[j] += g * s * l.transpose();
          d_s_enc += g * (params.sli.W[j] * l);
          d_l_enc += g * (params.sli.W[j].transpose() * s);
        }
        break;
      }
      default: break;
    }
  } else {
    Index at = fmap_len;
    if (have_s) {
      d_s_enc = d_concat.segment(at, cfg.embedding_len);
      at += cfg.embedding_len;
    }
    if (have_l) d_l_enc = d_concat.segment(at, cfg.embedding_len);
  }

  if (have_s) {
    Vector d_h1 = affine_bwd_into(params.speaker.ffn2, cache.s_h1, cache.s_enc, d_s_enc,
                                  grads.speaker.ffn2);
    Vector d_raw = affine_bwd_into(params.speaker.ffn1, cache.s_raw, cache.s_h1, d_h1,
                                   grads.speaker.ffn1);
    grads.speaker.table.row(cache.speaker_row) += d_raw.transpose();
  }
  if (have_l) {
    Vector d_h1 = affine_bwd_into(params.listener.ffn2, cache.l_h1, cache.l_enc, d_l_enc,
                                  grads.listener.ffn2);
    Vector d_raw = affine_bwd_into(params.listener.ffn1, cache.l_raw, cache.l_h1, d_h1,
                                   grads.listener.ffn1);
    grads.listener.table.row(cache.listener_row) += d_raw.transpose();
  }
}

namespace {

struct TensorRef {
  std::string name;
  double* data;
  Index size;
};

void add_affine_refs(std::vector<TensorRef>& refs, const std::string& prefix, Affine& layer) {
  refs.push_back({prefix + ".W", layer.W.data(), layer.W.size()});
  refs.push_back({prefix + ".b", layer.b.data(), layer.b.size()});
}

std::vector<TensorRef> tensor_refs(ModelParams& params) {
  std::vector<TensorRef> refs;
  for (std::size_t i = 0; i < params.filters.size(); ++i) {
    refs.push_back({"filters." + std::to_string(i) + ".weights",
                    params.filters[i].weights.data(), params.filters[i].weights.size()});
    refs.push_back({"filters." + std::to_string(i) + ".bias", &params.filters[i].bias, 1});
  }
  if (variant_uses_speaker(params.cfg.variant)) {
    refs.push_back({"speaker.table", params.speaker.table.data(), params.speaker.table.size()});
    add_affine_refs(refs, "speaker.ffn1", params.speaker.ffn1);
    add_affine_refs(refs, "speaker.ffn2", params.speaker.ffn2);
  }
  if (variant_uses_listener(params.cfg.variant)) {
    refs.push_back({"listener.table", params.listener.table.data(), params.listener.table.size()});
    add_affine_refs(refs, "listener.ffn1", params.listener.ffn1);
    add_affine_refs(refs, "listener.ffn2", params.listener.ffn2);
  }
  for (std::size_t j = 0; j < params.sli.W.size(); ++j)
    refs.push_back({"sli.W." + std::to_string(j), params.sli.W[j].data(), params.sli.W[j].size()});
  if (params.sli.V.size() > 0) refs.push_back({"sli.V", params.sli.V.data(), params.sli.V.size()});
  if (params.sli.U.size() > 0) refs.push_back({"sli.U", params.sli.U.data(), params.sli.U.size()});
  if (params.sli.b.size() > 0) refs.push_back({"sli.b", params.sli.b.data(), params.sli.b.size()});
  if (params.cfg.head_hidden > 0) add_affine_refs(refs, "hidden", params.hidden);
  add_affine_refs(refs, "output", params.output);
  return refs;
}

}  // namespace

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for (TensorRef& ref : tensor_refs(z))
    std::memset(ref.data, 0, static_cast<std::size_t>(ref.size) * sizeof(double));
  return z;
}

std::size_t param_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const TensorRef& ref : tensor_refs(const_cast<ModelParams&>(params)))
    n += static_cast<std::size_t>(ref.size);
  return n;
}

Vector pack_params(const ModelParams& params) {
  Vector theta(static_cast<Index>(param_count(params)));
  Index at = 0;
  for (const TensorRef& ref : tensor_refs(const_cast<ModelParams&>(params))) {
    theta.segment(at, ref.size) = Eigen::Map<const Vector>(ref.data, ref.size);
    at += ref.size;
  }
  return theta;
}

void unpack_params(ModelParams& params, const Vector& theta) {
  if (theta.size() != static_cast<Index>(param_count(params)))
    fail("SizeMismatch", "parameter vector has size " + std::to_string(theta.size()) +
                             ", model holds " + std::to_string(param_count(params)));
  Index at = 0;
  for (TensorRef& ref : tensor_refs(params)) {
    Eigen::Map<Vector>(ref.data, ref.size) = theta.segment(at, ref.size);
    at += ref.size;
  }
}

namespace {

template <class T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_raw(std::ifstream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) fail("TruncatedFile", std::string("unexpected end of checkpoint reading ") + what);
  return value;
}

json config_to_json(const ModelConfig& cfg) {
  json j;
  j["variant"] = to_string(cfg.variant);
  j["filter_widths"] = cfg.filter_widths;
  j["n_filters"] = cfg.n_filters;
  j["pool_rows"] = cfg.pool_rows;
  j["n_frames"] = cfg.n_frames;
  j["n_coeffs"] = cfg.n_coeffs;
  j["embedding_len"] = cfg.embedding_len;
  j["sli_k"] = cfg.sli_k;
  j["sli_m"] = cfg.sli_m;
  j["head_hidden"] = cfg.head_hidden;
  j["dropout_rate"] = cfg.dropout_rate;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.variant = variant_from_string(j.at("variant").get<std::string>());
  cfg.filter_widths = j.at("filter_widths").get<std::vector<int>>();
  cfg.n_filters = j.at("n_filters").get<int>();
  cfg.pool_rows = j.at("pool_rows").get<int>();
  cfg.n_frames = j.at("n_frames").get<int>();
  cfg.n_coeffs = j.at("n_coeffs").get<int>();
  cfg.embedding_len = j.at("embedding_len").get<int>();
  cfg.sli_k = j.at("sli_k").get<int>();
  cfg.sli_m = j.at("sli_m").get<int>();
  cfg.head_hidden = j.at("head_hidden").get<int>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const std::string& config_hash) {
  json header;
  header["config"] = config_to_json(params.cfg);
  header["speaker_ids"] = params.speaker.ids;
  header["listener_ids"] = params.listener.ids;
  header["init_seed"] = params.init_seed;
  header["config_hash"] = config_hash;
  std::string header_text = header.dump();

  auto refs = tensor_refs(const_cast<ModelParams&>(params));
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail("IoFailure", "cannot open " + tmp + " for writing");
    out.write("BCCK", 4);
    write_raw(out, static_cast<std::uint16_t>(1));
    write_raw(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    write_raw(out, static_cast<std::uint32_t>(refs.size()));
    for (const TensorRef& ref : refs) {
      write_raw(out, static_cast<std::uint16_t>(ref.name.size()));
      out.write(ref.name.data(), static_cast<std::streamsize>(ref.name.size()));
      write_raw(out, static_cast<std::uint64_t>(ref.size));
      out.write(reinterpret_cast<const char*>(ref.data),
                static_cast<std::streamsize>(ref.size) * 8);
    }
    if (!out) fail("IoFailure", "short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

struct CheckpointHeader {
  json header;
};

CheckpointHeader read_checkpoint_header(std::ifstream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "BCCK", 4) != 0) fail("BadMagic", path + " is not a checkpoint");
  std::uint16_t version = read_raw<std::uint16_t>(in, "version");
  if (version != 1)
    fail("VersionMismatch", path + ": checkpoint version " + std::to_string(version));
  std::uint32_t header_len = read_raw<std::uint32_t>(in, "header length");
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), header_len);
  if (!in) fail("TruncatedFile", path + ": header");
  json header = json::parse(header_text, nullptr, false);
  if (header.is_discarded()) fail("InvalidConfig", path + ": corrupt checkpoint header");
  return {std::move(header)};
}

}  // namespace

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("IoFailure", "cannot open " + path);
  json header = read_checkpoint_header(in, path).header;

  ModelConfig cfg = config_from_json(header.at("config"));
  auto speaker_ids = header.at("speaker_ids").get<std::vector<std::string>>();
  auto listener_ids = header.at("listener_ids").get<std::vector<std::string>>();
  std::uint64_t seed = header.at("init_seed").get<std::uint64_t>();
  ModelParams params = init_model(cfg, variant_uses_speaker(cfg.variant) ? speaker_ids
                                                                         : std::vector<std::string>{},
                                  variant_uses_listener(cfg.variant) ? listener_ids
                                                                     : std::vector<std::string>{},
                                  seed);

  std::uint32_t n_tensors = read_raw<std::uint32_t>(in, "tensor count");
  auto refs = tensor_refs(params);
  if (n_tensors != refs.size())
    fail("SizeMismatch", path + ": checkpoint holds " + std::to_string(n_tensors) +
                             " tensors, model expects " + std::to_string(refs.size()));
  for (TensorRef& ref : refs) {
    std::uint16_t name_len = read_raw<std::uint16_t>(in, "tensor name");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) fail("TruncatedFile", path + ": tensor name");
    if (name != ref.name)
      fail("SizeMismatch", path + ": tensor '" + name + "' where '" + ref.name + "' expected");
    std::uint64_t size = read_raw<std::uint64_t>(in, "tensor size");
    if (size != static_cast<std::uint64_t>(ref.size))
      fail("SizeMismatch", path + ": tensor '" + name + "' has wrong size");
    in.read(reinterpret_cast<char*>(ref.data), static_cast<std::streamsize>(size) * 8);
    if (!in) fail("TruncatedFile", path + ": tensor payload");
  }
  return params;
}

std::string checkpoint_config_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("IoFailure", "cannot open " + path);
  json header = read_checkpoint_header(in, path).header;
  return header.value("config_hash", "");
}

}  // namespace bcp
