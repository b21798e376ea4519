#include "slasd/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "slasd/fvem.hpp"

namespace slasd {

void ModelConfig::validate() const {
  if (dim <= 0) throw InvalidArgument("model: dim must be positive");
  if (n_heads <= 0 || dim % n_heads != 0) throw InvalidArgument("model: dim must be divisible by n_heads");
  if (n_encoder_layers < 0) throw InvalidArgument("model: n_encoder_layers must be >= 0");
  if (ffn_hidden <= 0) throw InvalidArgument("model: ffn_hidden must be positive");
  if (max_frames_per_identity <= 0) throw InvalidArgument("model: max_frames_per_identity must be positive");
}

std::size_t param_count_formula(const ModelConfig& cfg) {
  const std::size_t D = cfg.dim, F = cfg.ffn_hidden;
  const std::size_t attn = 4 * (D * D + D);
  const std::size_t layer = attn + 2 * D + (D * F + F) + (F * D + D) + 2 * D;
  return cfg.n_encoder_layers * layer + attn + 2 * D + D + 1;
}

namespace {

template <class T>
Matrix<T> xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix<T> m(fan_in, fan_out);
  for (auto& v : m.data) v = static_cast<T>(u(rng));
  return m;
}

template <class T>
AttentionSlots<Matrix<T>> init_attention(std::size_t D, std::mt19937_64& rng) {
  AttentionSlots<Matrix<T>> a;
  a.wq = xavier<T>(D, D, rng), a.bq = Matrix<T>(1, D);
  a.wk = xavier<T>(D, D, rng), a.bk = Matrix<T>(1, D);
  a.wv = xavier<T>(D, D, rng), a.bv = Matrix<T>(1, D);
  a.wo = xavier<T>(D, D, rng), a.bo = Matrix<T>(1, D);
  return a;
}

}  // namespace

template <class T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const std::size_t D = cfg.dim, F = cfg.ffn_hidden;
  ModelParams<T> p;
  p.config = cfg;
  for (int l = 0; l < cfg.n_encoder_layers; ++l) {
    EncoderLayerSlots<Matrix<T>> layer;
    layer.attn = init_attention<T>(D, rng);
    layer.ln1_gain = Matrix<T>(1, D, T(1)), layer.ln1_bias = Matrix<T>(1, D);
    layer.ffn_w1 = xavier<T>(D, F, rng), layer.ffn_b1 = Matrix<T>(1, F);
    layer.ffn_w2 = xavier<T>(F, D, rng), layer.ffn_b2 = Matrix<T>(1, D);
    layer.ln2_gain = Matrix<T>(1, D, T(1)), layer.ln2_bias = Matrix<T>(1, D);
    p.tensors.encoder.push_back(std::move(layer));
  }
  p.tensors.cross = init_attention<T>(D, rng);
  p.tensors.cross_ln_gain = Matrix<T>(1, D, T(1));
  p.tensors.cross_ln_bias = Matrix<T>(1, D);
  p.tensors.collapse_w = xavier<T>(1, D, rng);
  p.tensors.collapse_b = Matrix<T>(1, 1);
  return p;
}

template <class T>
HeadSlots<ad::Var> bind(ad::Tape<T>& tape, const ModelParams<T>& params, bool trainable) {
  return params.tensors.map([&](const Matrix<T>& m) { return trainable ? tape.parameter(m) : tape.constant(m); });
}

template <class T>
ad::Var attention(ad::Tape<T>& tape, ad::Var queries, ad::Var keys_values, const AttentionSlots<ad::Var>& p,
                  int n_heads) {
  const std::size_t D = tape.value(p.wq).cols;
  if (n_heads <= 0 || D % static_cast<std::size_t>(n_heads) != 0)
    throw InvalidArgument("attention: width not divisible by heads");
  if (tape.value(queries).cols != tape.value(p.wq).rows || tape.value(keys_values).cols != tape.value(p.wk).rows)
    throw InvalidArgument("attention: input width does not match projections");
  const std::size_t dh = D / static_cast<std::size_t>(n_heads);
  const ad::Var q = tape.add_row(tape.matmul(queries, p.wq), p.bq);
  const ad::Var k = tape.add_row(tape.matmul(keys_values, p.wk), p.bk);
  const ad::Var v = tape.add_row(tape.matmul(keys_values, p.wv), p.bv);
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<ad::Var> heads;
  for (int h = 0; h < n_heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    const ad::Var qh = tape.slice_cols(q, off, dh);
    const ad::Var kh = tape.slice_cols(k, off, dh);
    const ad::Var vh = tape.slice_cols(v, off, dh);
    const ad::Var weights = tape.softmax_rows(tape.scale(tape.matmul_nt(qh, kh), scale));
    heads.push_back(tape.matmul(weights, vh));
  }
  const ad::Var merged = n_heads == 1 ? heads[0] : tape.concat_cols(heads);
  return tape.add_row(tape.matmul(merged, p.wo), p.bo);
}

template <class T>
ad::Var encode_identity(ad::Tape<T>& tape, ad::Var frames, const HeadSlots<ad::Var>& p, const ModelConfig& cfg) {
  if (tape.value(frames).rows == 0) throw InvalidArgument("encode_identity: no frames");
  ad::Var x = frames;
  for (const auto& layer : p.encoder) {
    const ad::Var a = attention(tape, x, x, layer.attn, cfg.n_heads);
    const ad::Var y = tape.layer_norm(tape.add(x, a), layer.ln1_gain, layer.ln1_bias);
    const ad::Var hidden = tape.gelu(tape.add_row(tape.matmul(y, layer.ffn_w1), layer.ffn_b1));
    const ad::Var f = tape.add_row(tape.matmul(hidden, layer.ffn_w2), layer.ffn_b2);
    x = tape.layer_norm(tape.add(y, f), layer.ln2_gain, layer.ln2_bias);
  }
  return tape.mean_rows(x);
}

template <class T>
ad::Var score_logits(ad::Tape<T>& tape, ad::Var utterance, ad::Var identities, const HeadSlots<ad::Var>& p,
                     const ModelConfig& cfg) {
  const auto& U = tape.value(utterance);
  const auto& I = tape.value(identities);
  if (U.rows == 0 || I.rows == 0) throw InvalidArgument("score: need at least one utterance segment and one identity");
  if (U.cols != static_cast<std::size_t>(cfg.dim) || I.cols != static_cast<std::size_t>(cfg.dim))
    throw InvalidArgument("score: embedding width does not match model dim");
  const ad::Var c = attention(tape, identities, utterance, p.cross, cfg.n_heads);
  const ad::Var h = tape.layer_norm(tape.add(identities, c), p.cross_ln_gain, p.cross_ln_bias);
  return tape.add_scalar(tape.matmul_nt(p.collapse_w, h), p.collapse_b);
}

EmbeddingMatrix cap_rows(const EmbeddingMatrix& frames, std::size_t cap, std::mt19937_64& rng) {
  if (frames.rows <= cap) return frames;
  std::vector<std::size_t> idx(frames.rows);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  // Partial Fisher-Yates, then restore temporal order.
  for (std::size_t i = 0; i < cap; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  EmbeddingMatrix out(cap, frames.cols);
  for (std::size_t i = 0; i < cap; ++i) std::copy_n(frames.row(idx[i]).begin(), frames.cols, out.row(i).begin());
  return out;
}

std::vector<float> encode_identity(const EmbeddingMatrix& frames, const ModelParams<float>& params) {
  ad::Tape<float> tape;
  const auto p = bind(tape, params, false);
  const auto out = encode_identity(tape, tape.constant(frames), p, params.config);
  return tape.value(out).data;
}

ScoreResult score_utterance(const EmbeddingMatrix& utterance_segments, const EmbeddingMatrix& identity_embeddings,
                            const ModelParams<float>& params) {
  ad::Tape<float> tape;
  const auto p = bind(tape, params, false);
  const auto logits =
      score_logits(tape, tape.constant(utterance_segments), tape.constant(identity_embeddings), p, params.config);
  ScoreResult r;
  const auto& z = tape.value(logits).data;
  r.logits.assign(z.begin(), z.end());
  const double mx = *std::max_element(r.logits.begin(), r.logits.end());
  double s = 0;
  for (double v : r.logits) s += std::exp(v - mx);
  for (double v : r.logits) r.probabilities.push_back(std::exp(v - mx) / s);
  return r;
}

void save_checkpoint(const ModelParams<float>& params, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& c = params.config;
  nlohmann::json index = {{"config",
                           {{"dim", c.dim},
                            {"n_heads", c.n_heads},
                            {"n_encoder_layers", c.n_encoder_layers},
                            {"ffn_hidden", c.ffn_hidden},
                            {"max_frames_per_identity", c.max_frames_per_identity}}},
                          {"tensors", nlohmann::json::object()}};
  auto copy = params;
  copy.tensors.visit([&](const std::string& name, Matrix<float>& m) {
    const std::string file = name + ".fvem";
    write_embeddings(dir / file, m);
    index["tensors"][name] = {{"file", file}, {"rows", m.rows}, {"cols", m.cols}};
  });
  std::ofstream out(dir / "index.json", std::ios::trunc);
  out << index.dump(2) << '\n';
}

ModelParams<float> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "index.json");
  if (!in) throw ParseError((dir / "index.json").string() + ": cannot open checkpoint index");
  nlohmann::json index;
  try {
    in >> index;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint index: ") + e.what());
  }
  ModelConfig cfg;
  const auto& jc = index.at("config");
  cfg.dim = jc.at("dim").get<int>();
  cfg.n_heads = jc.at("n_heads").get<int>();
  cfg.n_encoder_layers = jc.at("n_encoder_layers").get<int>();
  cfg.ffn_hidden = jc.at("ffn_hidden").get<int>();
  cfg.max_frames_per_identity = jc.value("max_frames_per_identity", 512);
  auto params = init_params<float>(cfg, 0);
  params.tensors.visit([&](const std::string& name, Matrix<float>& m) {
    if (!index["tensors"].contains(name)) throw ValidationError("checkpoint: missing tensor " + name);
    const auto& entry = index["tensors"][name];
    auto loaded = read_embeddings(dir / entry.at("file").get<std::string>());
    if (loaded.rows != m.rows || loaded.cols != m.cols)
      throw ValidationError("checkpoint: tensor " + name + " has wrong shape");
    m = std::move(loaded);
  });
  return params;
}

template ModelParams<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ModelParams<double> init_params<double>(const ModelConfig&, std::uint64_t);
template HeadSlots<ad::Var> bind<float>(ad::Tape<float>&, const ModelParams<float>&, bool);
template HeadSlots<ad::Var> bind<double>(ad::Tape<double>&, const ModelParams<double>&, bool);
template ad::Var attention<float>(ad::Tape<float>&, ad::Var, ad::Var, const AttentionSlots<ad::Var>&, int);
template ad::Var attention<double>(ad::Tape<double>&, ad::Var, ad::Var, const AttentionSlots<ad::Var>&, int);
template ad::Var encode_identity<float>(ad::Tape<float>&, ad::Var, const HeadSlots<ad::Var>&, const ModelConfig&);
template ad::Var encode_identity<double>(ad::Tape<double>&, ad::Var, const HeadSlots<ad::Var>&, const ModelConfig&);
template ad::Var score_logits<float>(ad::Tape<float>&, ad::Var, ad::Var, const HeadSlots<ad::Var>&, const ModelConfig&);
template ad::Var score_logits<double>(ad::Tape<double>&, ad::Var, ad::Var, const HeadSlots<ad::Var>&,
                                      const ModelConfig&);

}  // namespace slasd
