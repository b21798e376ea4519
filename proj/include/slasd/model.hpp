#pragma once

// Scoring head: a post-norm transformer encoder over each identity's face
// frames, mean pooling to one identity embedding, cross-attention from the
// identity embeddings (queries) to the utterance segments (keys/values), a
// residual + layer norm, and a D -> 1 collapse giving one logit per identity.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "slasd/autodiff.hpp"
#include "slasd/matrix.hpp"

namespace slasd {

struct ModelConfig {
  int dim = 128;
  int n_heads = 4;
  // 0 bypasses the encoder: identity embedding = plain mean of the frames.
  int n_encoder_layers = 1;
  int ffn_hidden = 512;
  int max_frames_per_identity = 512;

  void validate() const;
};

template <class S>
struct AttentionSlots {
  S wq, bq, wk, bk, wv, bv, wo, bo;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "wq", wq), f(prefix + "bq", bq), f(prefix + "wk", wk), f(prefix + "bk", bk);
    f(prefix + "wv", wv), f(prefix + "bv", bv), f(prefix + "wo", wo), f(prefix + "bo", bo);
  }
  template <class F>
  auto map(F&& f) const -> AttentionSlots<decltype(f(wq))> {
    return {f(wq), f(bq), f(wk), f(bk), f(wv), f(bv), f(wo), f(bo)};
  }
};

template <class S>
struct EncoderLayerSlots {
  AttentionSlots<S> attn;
  S ln1_gain, ln1_bias;
  S ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  S ln2_gain, ln2_bias;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    attn.visit(prefix + "attn.", f);
    f(prefix + "ln1.gain", ln1_gain), f(prefix + "ln1.bias", ln1_bias);
    f(prefix + "ffn.w1", ffn_w1), f(prefix + "ffn.b1", ffn_b1), f(prefix + "ffn.w2", ffn_w2), f(prefix + "ffn.b2", ffn_b2);
    f(prefix + "ln2.gain", ln2_gain), f(prefix + "ln2.bias", ln2_bias);
  }
  template <class F>
  auto map(F&& f) const -> EncoderLayerSlots<decltype(f(ln1_gain))> {
    return {attn.map(f), f(ln1_gain), f(ln1_bias), f(ffn_w1), f(ffn_b1),
            f(ffn_w2),   f(ffn_b2),   f(ln2_gain), f(ln2_bias)};
  }
};

template <class S>
struct HeadSlots {
  std::vector<EncoderLayerSlots<S>> encoder;
  AttentionSlots<S> cross;
  S cross_ln_gain, cross_ln_bias;
  S collapse_w;  // 1 x D
  S collapse_b;  // 1 x 1

  template <class F>
  void visit(F&& f) {
    for (std::size_t l = 0; l < encoder.size(); ++l) encoder[l].visit("encoder." + std::to_string(l) + ".", f);
    cross.visit("cross.", f);
    f(std::string("cross.ln.gain"), cross_ln_gain), f(std::string("cross.ln.bias"), cross_ln_bias);
    f(std::string("collapse.w"), collapse_w), f(std::string("collapse.b"), collapse_b);
  }
  template <class F>
  auto map(F&& f) const -> HeadSlots<decltype(f(collapse_w))> {
    HeadSlots<decltype(f(collapse_w))> out;
    for (const auto& l : encoder) out.encoder.push_back(l.map(f));
    out.cross = cross.map(f);
    out.cross_ln_gain = f(cross_ln_gain);
    out.cross_ln_bias = f(cross_ln_bias);
    out.collapse_w = f(collapse_w);
    out.collapse_b = f(collapse_b);
    return out;
  }
};

template <class T>
struct ModelParams {
  ModelConfig config;
  HeadSlots<Matrix<T>> tensors;

  template <class U>
  ModelParams<U> cast() const {
    return {config, tensors.map([](const Matrix<T>& m) { return m.template cast<U>(); })};
  }
  // Raw pointers in visit order, for optimizers and gradient checks.
  std::vector<Matrix<T>*> pointers() {
    std::vector<Matrix<T>*> out;
    tensors.visit([&](const std::string&, Matrix<T>& m) { out.push_back(&m); });
    return out;
  }
  std::vector<std::string> names() {
    std::vector<std::string> out;
    tensors.visit([&](const std::string& n, Matrix<T>&) { out.push_back(n); });
    return out;
  }
};

// Xavier-uniform weights, zero biases, unit layer-norm gains.
template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

template <class T>
std::size_t count_params(const ModelParams<T>& params) {
  std::size_t n = 0;
  auto copy = params;  // visit is non-const
  copy.tensors.visit([&](const std::string&, Matrix<T>& m) { n += m.size(); });
  return n;
}

// Closed-form parameter count of the architecture described by cfg.
std::size_t param_count_formula(const ModelConfig& cfg);

// ---- differentiable forward pieces (any scalar type) ----

template <class T>
HeadSlots<ad::Var> bind(ad::Tape<T>& tape, const ModelParams<T>& params, bool trainable);

// Multi-head scaled dot-product attention with input/output projections.
template <class T>
ad::Var attention(ad::Tape<T>& tape, ad::Var queries, ad::Var keys_values, const AttentionSlots<ad::Var>& p, int n_heads);

template <class T>
ad::Var encode_identity(ad::Tape<T>& tape, ad::Var frames, const HeadSlots<ad::Var>& p, const ModelConfig& cfg);

// utterance: M x D, identities: N x D -> 1 x N logits.
template <class T>
ad::Var score_logits(ad::Tape<T>& tape, ad::Var utterance, ad::Var identities, const HeadSlots<ad::Var>& p,
                     const ModelConfig& cfg);

// ---- inference API ----

struct ScoreResult {
  std::string clip_id;
  std::string utt_id;
  std::vector<std::string> identity_ids;
  std::vector<double> probabilities;
  std::vector<double> logits;
};

// Uniformly subsamples rows (order preserved) when rows exceed cap.
EmbeddingMatrix cap_rows(const EmbeddingMatrix& frames, std::size_t cap, std::mt19937_64& rng);

std::vector<float> encode_identity(const EmbeddingMatrix& frames, const ModelParams<float>& params);

ScoreResult score_utterance(const EmbeddingMatrix& utterance_segments, const EmbeddingMatrix& identity_embeddings,
                            const ModelParams<float>& params);

// Checkpoint = index.json (config + name -> file/shape) plus one FVEM file per tensor.
void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& dir);
ModelParams<float> load_checkpoint(const std::filesystem::path& dir);

}  // namespace slasd
