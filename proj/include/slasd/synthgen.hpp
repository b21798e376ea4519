#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "slasd/attribution.hpp"
#include "slasd/corpus.hpp"

namespace slasd {

struct Range {
  double lo = 0;
  double hi = 0;
};

struct SynthConfig {
  int n_clips = 10;
  int identities_per_clip = 4;
  int tracks_per_identity = 2;
  Range frames_per_track{90, 240};
  int utterances_per_identity = 4;
  Range utterance_duration_s{0.8, 3.0};
  double clip_duration_s = 30.0;
  int dim = 128;
  double face_noise_sigma_clean = 0.05;
  double face_noise_sigma_corrupt = 1.5;
  double corrupt_frame_fraction = 0.3;
  double voice_noise_sigma = 0.3;
  double offscreen_speaker_fraction = 0.2;
  double overlap_speech_fraction = 0.1;
  std::uint64_t seed = 1;

  // Knobs beyond the core degradation model.
  double fps = 30.0;
  int sample_rate_hz = 16000;
  double hop_s = 0.04;
  double turn_gap_probability = 0.5;  // otherwise the next speaker starts immediately
  Range turn_gap_s{0.3, 1.2};
  double stream_noise_sigma = 0.5;  // per-hop speaker-stream noise
  double voice_rotation = 0.0;      // 0: voices share the face anchor space; 1: fully rotated space
  int segments_per_utterance = 1;
  bool emit_boxes = false;

  void validate() const;
};

// Hidden state the generator knows but the corpus does not carry.
struct SynthTruth {
  struct ClipTruth {
    std::vector<std::string> speaker_ids;  // visible identities then off-screen speakers
    EmbeddingMatrix face_anchors;          // one row per speaker id
    EmbeddingMatrix voice_anchors;
    std::map<std::string, std::vector<std::uint8_t>> frame_corrupt;  // track id -> 1 = corrupted
  };
  std::map<std::string, ClipTruth> clips;
};

struct SynthCorpus {
  Corpus corpus;
  SynthTruth truth;
};

// Deterministic for a fixed cfg (std::mt19937_64 seeded per clip from cfg.seed and the clip index).
SynthCorpus generate_corpus(const SynthConfig& cfg);

// Corpus files plus ground_truth.json and per-clip anchor FVEM files.
void save_synthetic(const SynthCorpus& synth, const SynthConfig& cfg, const std::filesystem::path& dir);

// Score-1.0 detections for every track frame whose identity is speaking at f / fps.
std::vector<FrameDetection> ground_truth_detections(const Corpus& corpus);

}  // namespace slasd
