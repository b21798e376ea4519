#include <doctest.h>

#include "fixtures.hpp"
#include "slasd/synthgen.hpp"
#include "slasd/training.hpp"

using namespace slasd;

namespace {

// c0: alice (two tracks) and bob on screen, carol speaks off screen.
// c1: only dave on screen.
Corpus batch_corpus() {
  std::mt19937_64 rng(4);
  Corpus c;
  c.embedding_dim = 8;
  Clip c0;
  c0.id = "c0";
  c0.duration_s = 10;
  c0.tracks.push_back({"t0", "alice", 0, 0, 9, "c0/t0.fvem", std::nullopt, {}});
  c0.tracks.push_back({"t1", "bob", 0, 0, 14, "c0/t1.fvem", std::nullopt, {}});
  c0.tracks.push_back({"t2", "alice", 1, 100, 104, "c0/t2.fvem", std::nullopt, {}});
  c0.utterances.push_back({"u0", "alice", 0.0, 1.0, "c0/u0.fvem"});
  c0.utterances.push_back({"u1", "bob", 1.0, 2.0, "c0/u1.fvem"});
  c0.utterances.push_back({"u2", "alice", 2.0, 3.0, "c0/u2.fvem"});
  c0.utterances.push_back({"u3", "carol", 3.0, 4.0, "c0/u3.fvem"});
  c0.offscreen_ids = {"carol"};
  Clip c1;
  c1.id = "c1";
  c1.duration_s = 5;
  c1.tracks.push_back({"t0", "dave", 0, 0, 9, "c1/t0.fvem", std::nullopt, {}});
  c1.utterances.push_back({"u0", "dave", 0.0, 1.0, "c1/u0.fvem"});
  for (const auto* clip : {&c0, &c1}) {
    for (const auto& t : clip->tracks) c.embeddings[t.frame_embeddings] = fixtures::random_matrix(t.frame_count(), 8, rng);
    for (const auto& u : clip->utterances) c.embeddings[u.segment_embeddings] = fixtures::random_matrix(1, 8, rng);
  }
  c.clips = {c0, c1};
  return c;
}

TrainConfig small_train_config() {
  TrainConfig cfg;
  cfg.model.dim = 16;
  cfg.model.ffn_hidden = 32;
  cfg.model.max_frames_per_identity = 16;
  cfg.epochs = 8;
  cfg.lr = 1e-3;
  cfg.lr_decay = 0.8;
  cfg.lr_decay_every = 4;
  return cfg;
}

Corpus small_synthetic() {
  SynthConfig s;
  s.dim = 16;
  s.n_clips = 3;
  s.identities_per_clip = 3;
  s.tracks_per_identity = 1;
  s.frames_per_track = {20, 30};
  s.utterances_per_identity = 3;
  s.clip_duration_s = 20;
  s.offscreen_speaker_fraction = 0;
  s.seed = 3;
  return generate_corpus(s).corpus;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  CHECK(lr_at_epoch(cfg, 0) == doctest::Approx(1e-5));
  CHECK(lr_at_epoch(cfg, 4) == doctest::Approx(1e-5));
  CHECK(lr_at_epoch(cfg, 5) == doctest::Approx(2e-6));
  CHECK(lr_at_epoch(cfg, 9) == doctest::Approx(2e-6));
  CHECK(lr_at_epoch(cfg, 10) == doctest::Approx(4e-7));
  cfg.lr_decay_every = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("batch composition") {
  const auto corpus = batch_corpus();
  const auto& c0 = corpus.clips[0];
  SUBCASE("audio side holds every utterance of the identity; visual side every visible identity") {
    const auto b = compose_training_batch(corpus, c0, "alice");
    REQUIRE(b);
    CHECK(b->utterances.size() == 2);
    CHECK(b->identity_ids == std::vector<std::string>{"alice", "bob"});
    CHECK(b->target == 0);
    REQUIRE(b->identity_frames.size() == 2);
    CHECK(b->identity_frames[0].rows == 15);  // both alice tracks
    CHECK(b->identity_frames[1].rows == 15);
    const auto bob = compose_training_batch(corpus, c0, "bob");
    REQUIRE(bob);
    CHECK(bob->target == 1);
    CHECK(bob->utterances.size() == 1);
  }
  SUBCASE("off-screen speaker has no batch") { CHECK_FALSE(compose_training_batch(corpus, c0, "carol").has_value()); }
  SUBCASE("identity without utterances is an error") {
    auto no_utt = corpus;
    no_utt.clips[0].utterances.erase(no_utt.clips[0].utterances.begin() + 1);
    CHECK_THROWS_AS(compose_training_batch(no_utt, no_utt.clips[0], "bob"), InvalidArgument);
  }
  SUBCASE("corpus-level listing skips off-screen and single-identity clips") {
    TrainConfig cfg;
    std::vector<std::string> skipped;
    const auto all = training_batches(corpus, cfg, &skipped);
    REQUIRE(all.size() == 2);
    CHECK(all[0].identity_id == "alice");
    CHECK(all[1].identity_id == "bob");
    CHECK(skipped.size() == 2);
    cfg.skip_single_identity_clips = false;
    CHECK(training_batches(corpus, cfg).size() == 3);
  }
}

TEST_CASE("training lowers the loss and is reproducible") {
  const auto corpus = small_synthetic();
  const auto cfg = small_train_config();
  const auto a = train(corpus, cfg);
  REQUIRE(a.epoch_loss.size() == 8);
  CHECK(a.epoch_lr[4] == doctest::Approx(0.8e-3));
  CHECK(a.epoch_loss.back() < a.epoch_loss.front());
  const auto b = train(corpus, cfg);
  CHECK(a.epoch_loss == b.epoch_loss);
  auto pa = a.params, pb = b.params;
  const auto xa = pa.pointers(), xb = pb.pointers();
  bool same = true;
  for (std::size_t i = 0; i < xa.size(); ++i) same = same && (*xa[i] == *xb[i]);
  CHECK(same);
}

TEST_CASE("training rejects inconsistent setups") {
  const auto corpus = small_synthetic();
  auto cfg = small_train_config();
  cfg.model.dim = 8;
  cfg.model.n_heads = 2;
  CHECK_THROWS_AS(train(corpus, cfg), InvalidArgument);
  cfg = small_train_config();
  cfg.lr = 0;
  CHECK_THROWS_AS(train(corpus, cfg), InvalidArgument);
  CHECK_THROWS_AS(train(Corpus{16, {}, {}, {}}, small_train_config()), InvalidArgument);
}
