#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "slasd/attribution.hpp"
#include "slasd/finetune.hpp"
#include "slasd/segmentation.hpp"
#include "slasd/synthgen.hpp"
#include "slasd/training.hpp"

namespace slasd {

using nlohmann::json;

// Config readers start from defaults, override present keys and reject unknown ones.
SynthConfig synth_config_from_json(const json& j);
json to_json(const SynthConfig& c);
SegConfig seg_config_from_json(const json& j);
json to_json(const SegConfig& c);
TrainConfig train_config_from_json(const json& j);
json to_json(const TrainConfig& c);
FinetuneConfig finetune_config_from_json(const json& j);
json to_json(const FinetuneConfig& c);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& j);

// 16 hex digits of FNV-1a over the compact dump; stable across runs and platforms.
std::string config_hash(const json& j);

json to_json(const ScoreResult& r);
ScoreResult score_result_from_json(const json& j);

// Hypotheses serialize with inline segment embeddings so scoring needs no sidecar files.
json to_json(const HypUtterance& h);
HypUtterance hyp_from_json(const json& j);

json to_json(const FrameDetection& d);
FrameDetection detection_from_json(const json& j);

json to_json(const EvalReport& r);

}  // namespace slasd
