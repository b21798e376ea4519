#include "slasd/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace slasd {

void SegConfig::validate() const {
  if (!(scd_window_s > 0 && scd_hop_s > 0)) throw InvalidArgument("seg: windows and hops must be positive");
  if (vad_hangover_s < 0) throw InvalidArgument("seg: vad_hangover_s must be >= 0");
  if (vad_min_speech_s < 0) throw InvalidArgument("seg: vad_min_speech_s must be >= 0");
  if (vad_smoothing_hops < 1) throw InvalidArgument("seg: vad_smoothing_hops must be >= 1");
  if (!(vad_noise_percentile >= 0 && vad_noise_percentile <= 100)) throw InvalidArgument("seg: bad noise percentile");
  if (min_utt_s && *min_utt_s < 0) throw InvalidArgument("seg: min_utt_s must be >= 0");
  if (max_utt_s && !(*max_utt_s > 0)) throw InvalidArgument("seg: max_utt_s must be positive");
  if (segments_per_utterance < 1) throw InvalidArgument("seg: segments_per_utterance must be >= 1");
}

double overlap_s(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

namespace {

double percentile(std::vector<double> values, double pct) {
  std::sort(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::string hyp_id(std::size_t i) {
  std::string s = std::to_string(i);
  return "h" + std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

}  // namespace

std::vector<SpeechRegion> energy_vad(std::span<const float> energy, double hop_s, const SegConfig& cfg) {
  cfg.validate();
  if (energy.empty()) throw InvalidArgument("energy_vad: empty stream");
  if (!(hop_s > 0)) throw InvalidArgument("energy_vad: hop_s must be positive");
  for (float e : energy)
    if (!std::isfinite(e)) throw InvalidArgument("energy_vad: non-finite energy");

  const std::size_t n = energy.size();
  const std::ptrdiff_t half = cfg.vad_smoothing_hops / 2;
  std::vector<double> smooth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto lo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(i) - half));
    const auto hi = std::min(n - 1, i + static_cast<std::size_t>(half));
    double s = 0;
    for (std::size_t k = lo; k <= hi; ++k) s += energy[k];
    smooth[i] = s / static_cast<double>(hi - lo + 1);
  }
  const double threshold = percentile(smooth, cfg.vad_noise_percentile) + cfg.vad_threshold_margin;

  std::vector<SpeechRegion> raw;
  for (std::size_t i = 0; i < n;) {
    if (smooth[i] <= threshold) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && smooth[j] > threshold) ++j;
    raw.push_back({static_cast<double>(i) * hop_s, static_cast<double>(j) * hop_s});
    i = j;
  }

  std::vector<SpeechRegion> merged;
  for (const auto& r : raw) {
    if (!merged.empty() && r.start_s - merged.back().end_s < cfg.vad_hangover_s)
      merged.back().end_s = r.end_s;
    else
      merged.push_back(r);
  }
  std::erase_if(merged, [&](const SpeechRegion& r) { return r.end_s - r.start_s < cfg.vad_min_speech_s; });
  return merged;
}

std::vector<double> change_curve(const EmbeddingMatrix& stream, std::size_t window_rows) {
  const std::size_t n = stream.rows, D = stream.cols;
  std::vector<double> d(n + 1, 0.0);
  if (window_rows == 0 || n < 2 * window_rows) return d;
  // Prefix sums over rows make every window mean O(D).
  std::vector<double> prefix((n + 1) * D, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < D; ++c) prefix[(r + 1) * D + c] = prefix[r * D + c] + stream(r, c);
  for (std::size_t i = window_rows; i + window_rows <= n; ++i) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t c = 0; c < D; ++c) {
      const double a = prefix[i * D + c] - prefix[(i - window_rows) * D + c];
      const double b = prefix[(i + window_rows) * D + c] - prefix[i * D + c];
      ab += a * b, aa += a * a, bb += b * b;
    }
    d[i] = (aa == 0.0 || bb == 0.0) ? 0.0 : std::max(0.0, 1.0 - ab / std::sqrt(aa * bb));
  }
  return d;
}

std::vector<ChangePoint> detect_change_points(const EmbeddingMatrix& stream, double hop_s, const SegConfig& cfg) {
  cfg.validate();
  if (!(hop_s > 0)) throw InvalidArgument("detect_change_points: hop_s must be positive");
  const auto w = static_cast<std::size_t>(std::max<long long>(1, std::llround(cfg.scd_window_s / hop_s)));
  const auto step = static_cast<std::size_t>(std::max<long long>(1, std::llround(cfg.scd_hop_s / hop_s)));
  if (stream.rows < 2 * w) return {};
  const auto d = change_curve(stream, w);

  std::vector<std::size_t> candidates;
  for (std::size_t i = w; i + w <= stream.rows; i += step) candidates.push_back(i);

  double threshold = cfg.scd_threshold;
  if (cfg.scd_threshold_mode == ThresholdMode::adaptive) {
    double mean = 0;
    for (auto i : candidates) mean += d[i];
    mean /= static_cast<double>(candidates.size());
    double var = 0;
    for (auto i : candidates) var += (d[i] - mean) * (d[i] - mean);
    var /= static_cast<double>(candidates.size());
    threshold = mean + cfg.scd_kappa * std::sqrt(var);
  }

  // A peak is the first maximum of d over candidates within +-w of it.
  std::vector<ChangePoint> out;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    const std::size_t i = candidates[k];
    if (!(d[i] > threshold)) continue;
    bool is_peak = true;
    for (std::size_t m = 0; m < candidates.size() && is_peak; ++m) {
      const std::size_t j = candidates[m];
      if (j == i || (j + w < i) || (j > i + w)) continue;
      if (d[j] > d[i] || (d[j] == d[i] && j < i)) is_peak = false;
    }
    if (is_peak) out.push_back({static_cast<double>(i) * hop_s, d[i]});
  }
  return out;
}

std::vector<HypUtterance> assemble_utterances(std::span<const SpeechRegion> regions,
                                              std::span<const ChangePoint> change_points, const SegConfig& cfg) {
  std::vector<std::pair<double, double>> pieces;
  for (const auto& r : regions) {
    double start = r.start_s;
    for (const auto& cp : change_points) {
      if (cp.t_s <= start || cp.t_s >= r.end_s) continue;
      pieces.emplace_back(start, cp.t_s);
      start = cp.t_s;
    }
    pieces.emplace_back(start, r.end_s);
  }
  std::vector<HypUtterance> out;
  for (const auto& [s, e] : pieces) {
    if (cfg.min_utt_s && e - s < *cfg.min_utt_s) continue;
    std::size_t parts = 1;
    if (cfg.max_utt_s && e - s > *cfg.max_utt_s) parts = static_cast<std::size_t>(std::ceil((e - s) / *cfg.max_utt_s));
    for (std::size_t p = 0; p < parts; ++p) {
      HypUtterance h;
      h.utt_id = hyp_id(out.size());
      h.start_s = s + (e - s) * static_cast<double>(p) / static_cast<double>(parts);
      h.end_s = p + 1 == parts ? e : s + (e - s) * static_cast<double>(p + 1) / static_cast<double>(parts);
      out.push_back(std::move(h));
    }
  }
  return out;
}

std::vector<LabeledHyp> overlap_filter(std::span<const HypUtterance> hyps, std::span<const HypUtterance> refs,
                                       double min_ratio) {
  std::vector<LabeledHyp> out;
  for (const auto& h : hyps) {
    bool qualifies = false;
    const HypUtterance* best = nullptr;
    double best_ov = -1;
    for (const auto& r : refs) {
      const double ov = overlap_s(h.start_s, h.end_s, r.start_s, r.end_s);
      if (ov >= min_ratio * (r.end_s - r.start_s) && ov > 0) qualifies = true;
      if (ov > best_ov || (ov == best_ov && best && r.start_s < best->start_s)) {
        best_ov = ov;
        best = &r;
      }
    }
    if (qualifies) out.push_back({h, best->speaker_id});
  }
  return out;
}

double utterance_recall(std::span<const HypUtterance> hyps, std::span<const HypUtterance> refs, double min_ratio) {
  if (refs.empty()) return 100.0;
  std::size_t covered = 0;
  for (const auto& r : refs) {
    for (const auto& h : hyps) {
      const double ov = overlap_s(h.start_s, h.end_s, r.start_s, r.end_s);
      if (ov > 0 && ov >= min_ratio * (r.end_s - r.start_s)) {
        ++covered;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(covered) / static_cast<double>(refs.size());
}

void embed_hypotheses(std::vector<HypUtterance>& hyps, const EmbeddingMatrix& speaker_stream, double hop_s,
                      int segments_per_utterance) {
  if (speaker_stream.rows == 0) throw InvalidArgument("embed_hypotheses: empty speaker stream");
  const std::size_t D = speaker_stream.cols;
  for (auto& h : hyps) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < speaker_stream.rows; ++r) {
      const double centre = (static_cast<double>(r) + 0.5) * hop_s;
      if (centre >= h.start_s && centre < h.end_s) rows.push_back(r);
    }
    if (rows.empty()) {
      const auto nearest = static_cast<std::size_t>(std::clamp<double>(
          std::floor((h.start_s + h.end_s) / 2 / hop_s), 0.0, static_cast<double>(speaker_stream.rows - 1)));
      rows.push_back(nearest);
    }
    const std::size_t M = std::min<std::size_t>(static_cast<std::size_t>(segments_per_utterance), rows.size());
    h.segment_embeddings = EmbeddingMatrix(M, D);
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t lo = rows.size() * m / M, hi = rows.size() * (m + 1) / M;
      auto out = h.segment_embeddings.row(m);
      for (std::size_t k = lo; k < hi; ++k)
        for (std::size_t c = 0; c < D; ++c) out[c] += speaker_stream(rows[k], c);
      normalize_in_place(out);
    }
  }
}

const char* to_string(FrontEnd f) {
  switch (f) {
    case FrontEnd::groundtruth:
      return "groundtruth";
    case FrontEnd::full:
      return "vad+scd";
    case FrontEnd::vad_only:
      return "vad-only";
  }
  return "?";
}

FrontEnd front_end_from_string(const std::string& s) {
  if (s == "groundtruth" || s == "gt") return FrontEnd::groundtruth;
  if (s == "vad+scd" || s == "full") return FrontEnd::full;
  if (s == "vad-only" || s == "vad") return FrontEnd::vad_only;
  throw InvalidArgument("unknown front end '" + s + "' (expected groundtruth, full or vad-only)");
}

std::vector<HypUtterance> reference_utterances(const Corpus& corpus, const Clip& clip) {
  std::vector<HypUtterance> out;
  for (const auto& u : clip.utterances) {
    HypUtterance h;
    h.utt_id = u.utt_id;
    h.start_s = u.start_s;
    h.end_s = u.end_s;
    h.speaker_id = u.speaker_id;
    h.segment_embeddings = corpus.matrix(u.segment_embeddings);
    out.push_back(std::move(h));
  }
  return out;
}

std::vector<HypUtterance> segment_clip(const Corpus& corpus, const Clip& clip, FrontEnd front_end,
                                       const SegConfig& cfg) {
  if (front_end == FrontEnd::groundtruth) return reference_utterances(corpus, clip);
  const auto& a = clip.audio_streams;
  if (!a.energy || !a.speaker_stream) throw ValidationError("clip '" + clip.id + "': audio streams required for segmentation");
  const auto& energy = corpus.matrix(*a.energy);
  const auto& stream = corpus.matrix(*a.speaker_stream);
  const auto regions = energy_vad(energy.data, a.hop_s, cfg);
  std::vector<ChangePoint> cps;
  if (front_end == FrontEnd::full) cps = detect_change_points(stream, a.hop_s, cfg);
  auto hyps = assemble_utterances(regions, cps, cfg);
  embed_hypotheses(hyps, stream, a.hop_s, cfg.segments_per_utterance);
  return hyps;
}

}  // namespace slasd
