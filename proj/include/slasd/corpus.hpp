#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slasd/matrix.hpp"

namespace slasd {

inline constexpr const char* kUnknownSpeaker = "unknown";

struct CropMeta {
  int channels = 3;
  int height = 0;
  int width = 0;
};

struct Box {
  double x = 0, y = 0, w = 0, h = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

double iou(const Box& a, const Box& b);

// One temporally contiguous face track (frames start_frame..end_frame inclusive).
struct FaceTrack {
  std::string track_id;
  std::string identity_id;
  int track_index = 0;
  int start_frame = 0;
  int end_frame = 0;
  std::string frame_embeddings;  // key into Corpus::embeddings (relative path)
  std::optional<CropMeta> crop_meta;
  std::vector<Box> boxes;  // empty, or one per frame

  int frame_count() const { return end_frame - start_frame + 1; }
};

struct Utterance {
  std::string utt_id;
  std::string speaker_id = kUnknownSpeaker;
  double start_s = 0;
  double end_s = 0;
  std::string segment_embeddings;

  bool speaker_known() const { return speaker_id != kUnknownSpeaker; }
  double duration_s() const { return end_s - start_s; }
  // Duration in audio samples.
  std::int64_t duration_samples(int sample_rate_hz) const;
};

struct AudioStreams {
  double hop_s = 0.0;
  std::optional<std::string> energy;          // rows x 1
  std::optional<std::string> speaker_stream;  // rows x D
};

struct Clip {
  std::string id;
  double duration_s = 0;
  double fps = 30.0;
  int sample_rate_hz = 16000;
  std::vector<FaceTrack> tracks;
  std::vector<Utterance> utterances;
  AudioStreams audio_streams;
  std::vector<std::string> offscreen_ids;

  int max_frame() const;  // floor(duration_s * fps)
  // Identities with at least one face track, in order of first appearance.
  std::vector<std::string> visible_identities() const;
  const FaceTrack* find_track(const std::string& track_id) const;
};

struct Corpus {
  int embedding_dim = 128;
  std::vector<Clip> clips;
  std::optional<std::uint64_t> seed;
  // Payloads keyed by the relative path used in the manifest.
  std::map<std::string, EmbeddingMatrix> embeddings;

  const EmbeddingMatrix& matrix(const std::string& key) const;
  const Clip* find_clip(const std::string& id) const;
};

// Parses and validates a manifest; embedding paths resolve relative to the manifest's directory.
Corpus load_manifest(const std::filesystem::path& path);

// Writes manifest.json plus every embedding payload under `dir`.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

std::vector<std::string> validate_corpus(const Corpus& corpus);

// Concatenates all track frames of one identity in a clip (track order).
EmbeddingMatrix identity_frames(const Corpus& corpus, const Clip& clip, const std::string& identity_id);

}  // namespace slasd
