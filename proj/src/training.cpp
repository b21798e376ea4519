#include "slasd/training.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "slasd/adam.hpp"

namespace slasd {

void TrainConfig::validate() const {
  model.validate();
  if (epochs < 0) throw InvalidArgument("train: epochs must be >= 0");
  if (!(lr > 0)) throw InvalidArgument("train: lr must be positive");
  if (!(lr_decay > 0)) throw InvalidArgument("train: lr_decay must be positive");
  if (lr_decay_every < 1) throw InvalidArgument("train: lr_decay_every must be >= 1");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.lr_decay_every));
}

std::optional<TrainingBatch> compose_training_batch(const Corpus& corpus, const Clip& clip, const std::string& identity) {
  TrainingBatch b;
  b.clip_id = clip.id;
  b.identity_id = identity;
  for (const auto& u : clip.utterances)
    if (u.speaker_id == identity) b.utterances.push_back(corpus.matrix(u.segment_embeddings));
  if (b.utterances.empty())
    throw InvalidArgument("compose_training_batch: identity '" + identity + "' has no utterances in clip '" + clip.id + "'");
  b.identity_ids = clip.visible_identities();
  const auto it = std::find(b.identity_ids.begin(), b.identity_ids.end(), identity);
  if (it == b.identity_ids.end()) return std::nullopt;
  b.target = static_cast<std::size_t>(it - b.identity_ids.begin());
  for (const auto& id : b.identity_ids) b.identity_frames.push_back(identity_frames(corpus, clip, id));
  return b;
}

std::vector<TrainingBatch> training_batches(const Corpus& corpus, const TrainConfig& cfg,
                                            std::vector<std::string>* skipped) {
  std::vector<TrainingBatch> out;
  for (const auto& clip : corpus.clips) {
    std::vector<std::string> speakers;
    for (const auto& u : clip.utterances)
      if (u.speaker_known() && std::find(speakers.begin(), speakers.end(), u.speaker_id) == speakers.end())
        speakers.push_back(u.speaker_id);
    for (const auto& s : speakers) {
      auto b = compose_training_batch(corpus, clip, s);
      const bool single = b && b->identity_ids.size() < 2;
      if (!b || (single && cfg.skip_single_identity_clips)) {
        if (skipped) skipped->push_back(clip.id + "/" + s + (b ? " (single visible identity)" : " (off-screen)"));
        continue;
      }
      out.push_back(std::move(*b));
    }
  }
  return out;
}

template <class T>
ad::Var batch_loss(ad::Tape<T>& tape, const HeadSlots<ad::Var>& params, const ModelConfig& cfg,
                   const std::vector<Matrix<T>>& utterances, const std::vector<Matrix<T>>& identity_frames,
                   std::size_t target) {
  if (utterances.empty()) throw InvalidArgument("batch_loss: no utterances");
  std::vector<ad::Var> identities;
  for (const auto& f : identity_frames) identities.push_back(encode_identity(tape, tape.constant(f), params, cfg));
  const ad::Var stacked = tape.concat_rows(identities);
  std::vector<ad::Var> losses;
  for (const auto& u : utterances)
    losses.push_back(tape.cross_entropy(score_logits(tape, tape.constant(u), stacked, params, cfg), target));
  return tape.mean_scalars(losses);
}

template ad::Var batch_loss<float>(ad::Tape<float>&, const HeadSlots<ad::Var>&, const ModelConfig&,
                                   const std::vector<Matrix<float>>&, const std::vector<Matrix<float>>&, std::size_t);
template ad::Var batch_loss<double>(ad::Tape<double>&, const HeadSlots<ad::Var>&, const ModelConfig&,
                                    const std::vector<Matrix<double>>&, const std::vector<Matrix<double>>&, std::size_t);

TrainResult train(const Corpus& corpus, const TrainConfig& cfg, const ModelParams<float>* init) {
  cfg.validate();
  if (cfg.model.dim != corpus.embedding_dim) throw InvalidArgument("train: model dim does not match corpus embedding_dim");
  TrainResult result;
  result.params = init ? *init : init_params<float>(cfg.model, cfg.seed);
  const auto batches = training_batches(corpus, cfg, &result.skipped);
  if (batches.empty()) throw InvalidArgument("train: empty training set");
  result.n_batches = batches.size();

  AdamState<float> adam;
  auto param_ptrs = result.params.pointers();
  std::mt19937_64 rng(cfg.seed ^ 0x74726169ULL);
  std::vector<std::size_t> order(batches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto cap = static_cast<std::size_t>(cfg.model.max_frames_per_identity);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (auto bi : order) {
      const auto& b = batches[bi];
      std::vector<EmbeddingMatrix> frames;
      for (const auto& f : b.identity_frames) frames.push_back(cap_rows(f, cap, rng));

      ad::Tape<float> tape;
      const auto bound = bind(tape, result.params, true);
      const auto loss = batch_loss(tape, bound, cfg.model, b.utterances, frames, b.target);
      tape.backward(loss);
      total += tape.value(loss).data[0];

      std::vector<const Matrix<float>*> grads;
      auto copy = bound;
      copy.visit([&](const std::string&, ad::Var& v) { grads.push_back(&tape.grad(v)); });
      adam_step<float>(param_ptrs, grads, adam, lr);
    }
    result.epoch_loss.push_back(total / static_cast<double>(batches.size()));
    result.epoch_lr.push_back(lr);
  }
  return result;
}

}  // namespace slasd
