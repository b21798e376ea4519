#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slasd/attribution.hpp"
#include "slasd/corpus.hpp"
#include "slasd/model.hpp"
#include "slasd/segmentation.hpp"

namespace slasd {

// Encodes every visible identity of the clip (frames capped with a seeded
// generator) and scores each hypothesis against all of them.
std::vector<ScoreResult> score_hypotheses(const Corpus& corpus, const Clip& clip, const std::vector<HypUtterance>& hyps,
                                          const ModelParams<float>& params, std::uint64_t seed = 0);

struct FrontEndRun {
  std::map<std::string, std::vector<HypUtterance>> hyps;
  std::vector<ScoreResult> scores;
};

// Segments and scores every clip; clips run in parallel.
FrontEndRun run_front_end(const Corpus& corpus, const ModelParams<float>& params, FrontEnd front_end,
                          const SegConfig& seg, std::uint64_t seed = 0);

EvalReport evaluate_front_end(const Corpus& corpus, const ModelParams<float>& params, FrontEnd front_end,
                              const SegConfig& seg, std::uint64_t seed = 0);

}  // namespace slasd
