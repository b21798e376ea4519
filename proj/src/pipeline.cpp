#include "slasd/pipeline.hpp"

#include <exception>
#include <random>

namespace slasd {

std::vector<ScoreResult> score_hypotheses(const Corpus& corpus, const Clip& clip, const std::vector<HypUtterance>& hyps,
                                          const ModelParams<float>& params, std::uint64_t seed) {
  const auto ids = clip.visible_identities();
  std::vector<ScoreResult> out;
  if (ids.empty()) return out;
  std::seed_seq seq(clip.id.begin(), clip.id.end());
  std::mt19937_64 rng(seq);
  rng.discard(seed % 1024);
  const auto cap = static_cast<std::size_t>(params.config.max_frames_per_identity);
  EmbeddingMatrix identities(ids.size(), static_cast<std::size_t>(params.config.dim));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto emb = encode_identity(cap_rows(identity_frames(corpus, clip, ids[i]), cap, rng), params);
    std::copy(emb.begin(), emb.end(), identities.row(i).begin());
  }
  for (const auto& h : hyps) {
    if (h.segment_embeddings.rows == 0) throw InvalidArgument("score: hypothesis '" + h.utt_id + "' has no embeddings");
    auto r = score_utterance(h.segment_embeddings, identities, params);
    r.clip_id = clip.id;
    r.utt_id = h.utt_id;
    r.identity_ids = ids;
    out.push_back(std::move(r));
  }
  return out;
}

FrontEndRun run_front_end(const Corpus& corpus, const ModelParams<float>& params, FrontEnd front_end,
                          const SegConfig& seg, std::uint64_t seed) {
  const auto n = static_cast<std::ptrdiff_t>(corpus.clips.size());
  std::vector<std::vector<HypUtterance>> hyps(corpus.clips.size());
  std::vector<std::vector<ScoreResult>> scores(corpus.clips.size());
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      const auto& clip = corpus.clips[static_cast<std::size_t>(i)];
      hyps[static_cast<std::size_t>(i)] = segment_clip(corpus, clip, front_end, seg);
      scores[static_cast<std::size_t>(i)] =
          score_hypotheses(corpus, clip, hyps[static_cast<std::size_t>(i)], params, seed);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  FrontEndRun run;
  for (std::size_t i = 0; i < corpus.clips.size(); ++i) {
    run.hyps[corpus.clips[i].id] = std::move(hyps[i]);
    for (auto& s : scores[i]) run.scores.push_back(std::move(s));
  }
  return run;
}

EvalReport evaluate_front_end(const Corpus& corpus, const ModelParams<float>& params, FrontEnd front_end,
                              const SegConfig& seg, std::uint64_t seed) {
  const auto run = run_front_end(corpus, params, front_end, seg, seed);
  EvalOptions opts;
  opts.front_end = to_string(front_end);
  return evaluate_run(corpus, run.hyps, run.scores, opts);
}

}  // namespace slasd
