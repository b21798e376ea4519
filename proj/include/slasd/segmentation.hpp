#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "slasd/corpus.hpp"
#include "slasd/matrix.hpp"

namespace slasd {

enum class ThresholdMode { absolute, adaptive };

struct SegConfig {
  // Energy VAD
  double vad_threshold_margin = 0.2;  // energy units above the noise floor
  double vad_hangover_s = 0.25;       // gaps shorter than this are bridged
  double vad_min_speech_s = 0.2;
  int vad_smoothing_hops = 5;
  double vad_noise_percentile = 10.0;
  // Speaker change detection
  double scd_window_s = 0.5;
  double scd_hop_s = 0.04;  // step between evaluated change candidates; rounded to stream hops
  ThresholdMode scd_threshold_mode = ThresholdMode::adaptive;
  double scd_threshold = 0.5;  // absolute mode
  double scd_kappa = 1.0;      // adaptive mode: mean + kappa * stddev
  // Assembly
  std::optional<double> min_utt_s;
  std::optional<double> max_utt_s;
  int segments_per_utterance = 1;

  void validate() const;
};

struct SpeechRegion {
  double start_s = 0;
  double end_s = 0;
  friend bool operator==(const SpeechRegion&, const SpeechRegion&) = default;
};

struct ChangePoint {
  double t_s = 0;
  double score = 0;
};

struct HypUtterance {
  std::string utt_id;
  double start_s = 0;
  double end_s = 0;
  std::string speaker_id = kUnknownSpeaker;  // set by overlap_filter or for reference utterances
  EmbeddingMatrix segment_embeddings;         // filled by embed_hypotheses
};

// Interval overlap length (>= 0).
double overlap_s(double a0, double a1, double b0, double b1);

std::vector<SpeechRegion> energy_vad(std::span<const float> energy, double hop_s, const SegConfig& cfg);

// Cosine distance between mean embeddings of [t - w, t) and [t, t + w) at every stream hop.
// Entry i corresponds to boundary t = i * hop_s; entries without full windows are 0.
std::vector<double> change_curve(const EmbeddingMatrix& stream, std::size_t window_rows);

std::vector<ChangePoint> detect_change_points(const EmbeddingMatrix& stream, double hop_s, const SegConfig& cfg);

std::vector<HypUtterance> assemble_utterances(std::span<const SpeechRegion> regions,
                                              std::span<const ChangePoint> change_points, const SegConfig& cfg);

struct LabeledHyp {
  HypUtterance hyp;
  std::string speaker_id;
};

// Training/dev only: keeps hyps overlapping >= min_ratio of some reference's duration.
std::vector<LabeledHyp> overlap_filter(std::span<const HypUtterance> hyps, std::span<const HypUtterance> refs,
                                       double min_ratio = 0.15);

// Percentage of references overlapped at >= min_ratio of their duration by some hyp; 100 when refs is empty.
double utterance_recall(std::span<const HypUtterance> hyps, std::span<const HypUtterance> refs,
                        double min_ratio = 0.15);

// Mean-pools speaker-stream rows inside each hyp interval into segments_per_utterance rows.
void embed_hypotheses(std::vector<HypUtterance>& hyps, const EmbeddingMatrix& speaker_stream, double hop_s,
                      int segments_per_utterance);

enum class FrontEnd { groundtruth, full, vad_only };
const char* to_string(FrontEnd f);
FrontEnd front_end_from_string(const std::string& s);

// Groundtruth utterances of a clip as hypotheses (corpus segment embeddings attached).
std::vector<HypUtterance> reference_utterances(const Corpus& corpus, const Clip& clip);

// Runs a front end over one clip's audio streams and attaches embeddings.
std::vector<HypUtterance> segment_clip(const Corpus& corpus, const Clip& clip, FrontEnd front_end,
                                       const SegConfig& cfg);

}  // namespace slasd
