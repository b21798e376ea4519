#include "slasd/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <tuple>

namespace slasd {

bool frame_in_interval(int frame, double fps, double start_s, double end_s) {
  const double t = static_cast<double>(frame) / fps;
  return start_s <= t && t < end_s;
}

std::vector<FrameDetection> attribute(const ScoreResult& scores, const HypUtterance& utt, const Clip& clip) {
  if (!scores.clip_id.empty() && scores.clip_id != clip.id)
    throw InvalidArgument("attribute: score result for clip '" + scores.clip_id + "' applied to clip '" + clip.id + "'");
  if (scores.identity_ids.size() != scores.probabilities.size())
    throw InvalidArgument("attribute: identity/probability count mismatch");
  std::vector<FrameDetection> out;
  for (const auto& t : clip.tracks) {
    const auto it = std::find(scores.identity_ids.begin(), scores.identity_ids.end(), t.identity_id);
    if (it == scores.identity_ids.end()) continue;
    const double p = scores.probabilities[static_cast<std::size_t>(it - scores.identity_ids.begin())];
    // First frame with f / fps >= start_s, then walk while inside.
    const int first = std::max(t.start_frame, static_cast<int>(std::floor(utt.start_s * clip.fps)) - 1);
    for (int f = first; f <= t.end_frame; ++f) {
      if (static_cast<double>(f) / clip.fps >= utt.end_s) break;
      if (!frame_in_interval(f, clip.fps, utt.start_s, utt.end_s)) continue;
      FrameDetection d{clip.id, f, t.track_id, p, std::nullopt};
      if (!t.boxes.empty()) d.box = t.boxes[static_cast<std::size_t>(f - t.start_frame)];
      out.push_back(std::move(d));
    }
  }
  return out;
}

std::vector<FrameDetection> merge_detections(std::span<const FrameDetection> detections) {
  std::vector<FrameDetection> sorted(detections.begin(), detections.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const FrameDetection& a, const FrameDetection& b) {
    return std::tie(a.clip_id, a.frame_index, a.track_id) < std::tie(b.clip_id, b.frame_index, b.track_id);
  });
  std::vector<FrameDetection> out;
  for (auto& d : sorted) {
    if (!out.empty() && out.back().clip_id == d.clip_id && out.back().frame_index == d.frame_index &&
        out.back().track_id == d.track_id) {
      if (d.score > out.back().score) out.back().score = d.score;
      continue;
    }
    out.push_back(std::move(d));
  }
  return out;
}

double all_point_ap(std::span<const double> recall, std::span<const double> precision) {
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i-- > 0;) mpre[i] = std::max(mpre[i], mpre[i + 1]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i)
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

double voc_map(std::span<const FrameDetection> detections, std::span<const FrameDetection> groundtruth, MatchMode mode,
               double iou_threshold) {
  if (groundtruth.empty()) return detections.empty() ? 100.0 : 0.0;

  std::vector<const FrameDetection*> ranked;
  ranked.reserve(detections.size());
  for (const auto& d : detections) ranked.push_back(&d);
  std::stable_sort(ranked.begin(), ranked.end(), [](const FrameDetection* a, const FrameDetection* b) {
    if (a->score != b->score) return a->score > b->score;
    return std::tie(a->clip_id, a->frame_index, a->track_id) < std::tie(b->clip_id, b->frame_index, b->track_id);
  });

  // Groundtruth indexed by (clip, frame); matched flags per entry.
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> by_frame;
  for (std::size_t g = 0; g < groundtruth.size(); ++g)
    by_frame[{groundtruth[g].clip_id, groundtruth[g].frame_index}].push_back(g);
  std::vector<bool> used(groundtruth.size(), false);

  std::vector<double> recall, precision;
  recall.reserve(ranked.size());
  precision.reserve(ranked.size());
  std::size_t tp = 0, fp = 0;
  const double n_gt = static_cast<double>(groundtruth.size());
  for (const auto* d : ranked) {
    bool is_tp = false;
    const auto it = by_frame.find({d->clip_id, d->frame_index});
    if (it != by_frame.end()) {
      std::ptrdiff_t best = -1;
      if (mode == MatchMode::identity) {
        for (auto g : it->second)
          if (groundtruth[g].track_id == d->track_id) best = static_cast<std::ptrdiff_t>(g);
      } else if (d->box) {
        double best_iou = -1;
        for (auto g : it->second) {
          if (!groundtruth[g].box) continue;
          const double v = iou(*d->box, *groundtruth[g].box);
          if (v > best_iou) best_iou = v, best = static_cast<std::ptrdiff_t>(g);
        }
        if (best_iou < iou_threshold) best = -1;
      }
      if (best >= 0 && !used[static_cast<std::size_t>(best)]) {
        used[static_cast<std::size_t>(best)] = true;
        is_tp = true;
      }
    }
    is_tp ? ++tp : ++fp;
    recall.push_back(static_cast<double>(tp) / n_gt);
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  return 100.0 * all_point_ap(recall, precision);
}

std::vector<FrameDetection> ground_truth_positives(const Corpus& corpus) {
  std::vector<FrameDetection> out;
  for (const auto& clip : corpus.clips) {
    for (const auto& t : clip.tracks) {
      for (int f = t.start_frame; f <= t.end_frame; ++f) {
        bool speaking = false;
        for (const auto& u : clip.utterances)
          if (u.speaker_id == t.identity_id && frame_in_interval(f, clip.fps, u.start_s, u.end_s)) {
            speaking = true;
            break;
          }
        if (!speaking) continue;
        FrameDetection d{clip.id, f, t.track_id, 1.0, std::nullopt};
        if (!t.boxes.empty()) d.box = t.boxes[static_cast<std::size_t>(f - t.start_frame)];
        out.push_back(std::move(d));
      }
    }
  }
  return out;
}

EvalReport evaluate_run(const Corpus& corpus, const std::map<std::string, std::vector<HypUtterance>>& hyps,
                        std::span<const ScoreResult> scores, const EvalOptions& options) {
  EvalReport report;
  report.front_end = options.front_end;

  std::map<std::pair<std::string, std::string>, const ScoreResult*> score_index;
  for (const auto& s : scores) score_index[{s.clip_id, s.utt_id}] = &s;

  const auto all_gt = ground_truth_positives(corpus);
  std::vector<FrameDetection> run_dets, run_gts;
  std::size_t covered_refs = 0, total_refs = 0, total_hyps = 0;

  for (const auto& clip : corpus.clips) {
    static const std::vector<HypUtterance> kNone;
    const auto hit = hyps.find(clip.id);
    const auto& clip_hyps = hit == hyps.end() ? kNone : hit->second;
    total_hyps += clip_hyps.size();

    std::vector<HypUtterance> refs;
    for (const auto& u : clip.utterances) refs.push_back({u.utt_id, u.start_s, u.end_s, u.speaker_id, {}});
    total_refs += refs.size();
    covered_refs += static_cast<std::size_t>(
        std::llround(utterance_recall(clip_hyps, refs, options.min_overlap_ratio) * static_cast<double>(refs.size()) / 100.0));

    // Dynamic subset: tracks with at least one frame inside some hyp interval.
    std::set<std::string> subset;
    for (const auto& t : clip.tracks)
      for (const auto& h : clip_hyps) {
        bool concurrent = false;
        for (int f = t.start_frame; f <= t.end_frame && !concurrent; ++f)
          concurrent = frame_in_interval(f, clip.fps, h.start_s, h.end_s);
        if (concurrent) {
          subset.insert(t.track_id);
          break;
        }
      }
    report.dynamic_subset_track_count += subset.size();

    std::vector<FrameDetection> clip_dets;
    for (const auto& h : clip_hyps) {
      const auto s = score_index.find({clip.id, h.utt_id});
      if (s == score_index.end()) continue;
      auto d = attribute(*s->second, h, clip);
      clip_dets.insert(clip_dets.end(), std::make_move_iterator(d.begin()), std::make_move_iterator(d.end()));
    }
    clip_dets = merge_detections(clip_dets);
    std::vector<FrameDetection> clip_gts;
    for (const auto& g : all_gt)
      if (g.clip_id == clip.id && subset.count(g.track_id)) clip_gts.push_back(g);

    if (!subset.empty())
      report.per_clip.push_back({clip.id, voc_map(clip_dets, clip_gts, options.mode, options.iou_threshold), clip_gts.size()});
    run_dets.insert(run_dets.end(), clip_dets.begin(), clip_dets.end());
    run_gts.insert(run_gts.end(), clip_gts.begin(), clip_gts.end());
  }

  report.recall_percent = total_refs == 0 ? 100.0 : 100.0 * static_cast<double>(covered_refs) / static_cast<double>(total_refs);
  report.n_detections = run_dets.size();
  report.n_groundtruth = run_gts.size();
  report.degenerate = total_hyps == 0 || report.dynamic_subset_track_count == 0;
  report.map_percent = report.degenerate ? 0.0 : voc_map(run_dets, run_gts, options.mode, options.iou_threshold);
  if (total_hyps == 0) report.recall_percent = total_refs == 0 ? 100.0 : 0.0;
  return report;
}

}  // namespace slasd
