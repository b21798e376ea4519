#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slasd/corpus.hpp"
#include "slasd/model.hpp"
#include "slasd/segmentation.hpp"

namespace slasd {

struct FrameDetection {
  std::string clip_id;
  int frame_index = 0;
  std::string track_id;
  double score = 0;
  std::optional<Box> box;
};

// Half-open frame/time rule: frame f is inside [s, e) iff s <= f / fps < e.
bool frame_in_interval(int frame, double fps, double start_s, double end_s);

// Every frame of every track whose identity is scored, lying inside the utterance
// interval and the track span, receives that identity's probability.
std::vector<FrameDetection> attribute(const ScoreResult& scores, const HypUtterance& utt, const Clip& clip);

// Score-1.0 entries for every track frame whose identity has a known
// utterance covering f / fps.
std::vector<FrameDetection> ground_truth_positives(const Corpus& corpus);

// One detection per (clip, frame, track); collisions keep the max score.
std::vector<FrameDetection> merge_detections(std::span<const FrameDetection> detections);

enum class MatchMode { identity, box_iou };

// Single-class VOC2012 all-point AP in percent. Detections are ranked by
// descending score, ties broken by (clip_id, frame_index, track_id).
double voc_map(std::span<const FrameDetection> detections, std::span<const FrameDetection> groundtruth,
               MatchMode mode = MatchMode::identity, double iou_threshold = 0.5);

// Area under the monotone precision envelope for the given cumulative
// precision/recall points (fractions), VOC2012 style.
double all_point_ap(std::span<const double> recall, std::span<const double> precision);

struct EvalOptions {
  std::string front_end = "unnamed";
  MatchMode mode = MatchMode::identity;
  double iou_threshold = 0.5;
  double min_overlap_ratio = 0.15;
};

struct ClipAp {
  std::string clip_id;
  double ap_percent = 0;
  std::size_t n_groundtruth = 0;
};

struct EvalReport {
  std::string front_end;
  double map_percent = 0;
  std::vector<ClipAp> per_clip;
  double recall_percent = 0;
  std::size_t n_detections = 0;
  std::size_t n_groundtruth = 0;
  std::size_t dynamic_subset_track_count = 0;
  bool degenerate = false;
};

// hyps: clip id -> hypothesis utterances. scores: one per scored hyp, matched by (clip_id, utt_id).
EvalReport evaluate_run(const Corpus& corpus, const std::map<std::string, std::vector<HypUtterance>>& hyps,
                        std::span<const ScoreResult> scores, const EvalOptions& options);

}  // namespace slasd
