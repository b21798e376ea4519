#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slasd/corpus.hpp"
#include "slasd/model.hpp"

namespace slasd {

struct TrainConfig {
  std::uint64_t seed = 7;
  int epochs = 50;
  double lr = 1e-5;
  double lr_decay = 0.2;
  int lr_decay_every = 5;
  // Single-identity clips give a softmax over one candidate and therefore no gradient.
  bool skip_single_identity_clips = true;
  ModelConfig model;

  void validate() const;
};

// lr * decay^floor(epoch / decay_every)
double lr_at_epoch(const TrainConfig& cfg, int epoch);

// Audio side: every utterance of one identity. Visual side: all face frames of
// every visible identity in the clip. target indexes identity_ids.
struct TrainingBatch {
  std::string clip_id;
  std::string identity_id;
  std::vector<EmbeddingMatrix> utterances;
  std::vector<std::string> identity_ids;
  std::vector<EmbeddingMatrix> identity_frames;
  std::size_t target = 0;
};

// nullopt when the identity has no face track (off-screen speaker).
// Throws InvalidArgument when the identity has no utterance in the clip.
std::optional<TrainingBatch> compose_training_batch(const Corpus& corpus, const Clip& clip, const std::string& identity);

// All batches of a corpus in clip/identity order. Skipped (clip/identity) keys are appended to `skipped`.
std::vector<TrainingBatch> training_batches(const Corpus& corpus, const TrainConfig& cfg,
                                            std::vector<std::string>* skipped = nullptr);

// Mean cross-entropy over the batch's utterances, each scored against all identities.
template <class T>
ad::Var batch_loss(ad::Tape<T>& tape, const HeadSlots<ad::Var>& params, const ModelConfig& cfg,
                   const std::vector<Matrix<T>>& utterances, const std::vector<Matrix<T>>& identity_frames,
                   std::size_t target);

struct TrainResult {
  ModelParams<float> params;
  std::vector<double> epoch_loss;  // mean batch loss seen during each epoch
  std::vector<double> epoch_lr;
  std::size_t n_batches = 0;
  std::vector<std::string> skipped;
};

// Starts from `init` when given, else from init_params(cfg.model, cfg.seed).
TrainResult train(const Corpus& corpus, const TrainConfig& cfg, const ModelParams<float>* init = nullptr);

}  // namespace slasd
