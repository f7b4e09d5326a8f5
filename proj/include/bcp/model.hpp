#pragma once

#include <bcp/numerics.hpp>

#include <string>
#include <unordered_map>
#include <vector>

namespace bcp {

enum class Variant {
  AC,              // acoustic only
  AC_S,            // + speaker embedding
  AC_L,            // + listener embedding
  AC_S_L,          // + both embeddings side by side
  AC_SLI_SUM,      // + sum interaction encoder
  AC_SLI_BILINEAR, // + bilinear interaction encoder
  AC_SLI_NTN,      // + neural tensor network encoder
};

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);
bool variant_uses_speaker(Variant v);
bool variant_uses_listener(Variant v);
bool variant_uses_sli(Variant v);

// Per-interlocutor lookup table plus the two feed-forward layers applied to
// every looked-up row.
struct BehaviorEmbedding {
  std::vector<std::string> ids;  // row order
  std::unordered_map<std::string, Index> index;
  Matrix table;                  // [n_ids x embedding_len]
  Affine ffn1, ffn2;
};

// Interaction encoder parameters. Bilinear uses W (k slices of n x n) and a
// k-sized bias; the tensor network additionally uses V [k x 2n], U [k x m] and
// an m-sized bias.
struct SliParams {
  std::vector<Matrix> W;
  Matrix V;
  Matrix U;
  Vector b;
};

Vector sli_sum(const Vector& s, const Vector& l);
Vector sli_bilinear(const Vector& s, const Vector& l, const SliParams& params);
Vector sli_ntn(const Vector& s, const Vector& l, const SliParams& params);

struct ModelConfig {
  Variant variant = Variant::AC;
  std::vector<int> filter_widths{10};
  int n_filters = 32;   // per width
  int pool_rows = 10;
  int n_frames = 48;
  int n_coeffs = 13;
  int embedding_len = 5;
  int sli_k = 5;
  int sli_m = 5;
  int head_hidden = 32;  // 0 = single affine head on the concatenation
  double dropout_rate = 0.3;
};

Index feature_map_len(const ModelConfig& config);
Index concat_len(const ModelConfig& config);

struct ModelParams {
  ModelConfig cfg;
  std::vector<ConvFilter> filters;  // width-major: all filters of widths[0] first
  BehaviorEmbedding speaker, listener;
  SliParams sli;
  Affine hidden;  // tanh, only when cfg.head_hidden > 0
  Affine output;  // identity; softmax applied outside
  std::uint64_t init_seed = 0;
};

// Glorot-uniform weights, zero biases, +-0.1 embedding tables; deterministic
// for a given seed. Only the tensors the variant actually uses are allocated.
ModelParams init_model(const ModelConfig& config, const std::vector<std::string>& speaker_ids,
                       const std::vector<std::string>& listener_ids, std::uint64_t seed);

// Pooled conv features for a window; filters may mix widths (grouped by width
// in order of first appearance).
Vector acoustic_component(const Matrix& window, const std::vector<ConvFilter>& filters,
                          Index pool_rows);

// Embedding row -> ffn1 -> ffn2.
Vector behavior_encode(const std::string& id, const BehaviorEmbedding& embedding);

struct ForwardCache {
  const Matrix* window = nullptr;
  std::vector<Matrix> conv_maps;      // one per width group
  std::vector<Index> group_offsets;   // feature-map segment start per group
  Vector feature_map;
  Index speaker_row = -1, listener_row = -1;
  Vector s_raw, s_h1, s_enc;
  Vector l_raw, l_h1, l_enc;
  Vector ntn_h;                       // tanh layer inside the tensor network
  Vector sli_out;
  Vector concat, dropout_mask, dropped, hidden_out, logits, probs;
};

// Class probabilities for one window. speaker_id / listener_id may be empty
// for variants that ignore them; rng drives dropout and is required in train
// mode when the dropout rate is positive.
Vector model_forward(const ModelParams& params, const Matrix& window,
                     const std::string& speaker_id, const std::string& listener_id, Mode mode,
                     Rng* rng = nullptr, ForwardCache* cache = nullptr);

// Accumulates d loss / d params into grads for one instance. cache must come
// from a model_forward call on params.
void model_backward(const ModelParams& params, const ForwardCache& cache, int gold,
                    ModelParams& grads);

ModelParams zeros_like(const ModelParams& params);
std::size_t param_count(const ModelParams& params);
Vector pack_params(const ModelParams& params);
void unpack_params(ModelParams& params, const Vector& theta);

// Versioned binary container: every tensor with its shape, the variant tag,
// the full configuration, id lists and the seed. Loads reproduce forward
// outputs bit-identically.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const std::string& config_hash);
ModelParams load_checkpoint(const std::string& path);
std::string checkpoint_config_hash(const std::string& path);

}  // namespace bcp
