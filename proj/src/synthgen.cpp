#include "slasd/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

#include "slasd/fvem.hpp"

namespace slasd {

void SynthConfig::validate() const {
  auto fraction = [](double f, const char* name) {
    if (!(f >= 0.0 && f <= 1.0)) throw InvalidArgument(std::string("synth: ") + name + " must be in [0, 1]");
  };
  auto range = [](const Range& r, const char* name) {
    if (!(r.lo > 0 && r.hi >= r.lo)) throw InvalidArgument(std::string("synth: ") + name + " must be a non-empty range");
  };
  if (n_clips < 0 || identities_per_clip < 0 || tracks_per_identity < 0 || utterances_per_identity < 0)
    throw InvalidArgument("synth: counts must be non-negative");
  if (dim <= 0) throw InvalidArgument("synth: dim must be positive");
  if (face_noise_sigma_clean < 0 || face_noise_sigma_corrupt < 0 || voice_noise_sigma < 0 || stream_noise_sigma < 0)
    throw InvalidArgument("synth: sigmas must be >= 0");
  fraction(corrupt_frame_fraction, "corrupt_frame_fraction");
  fraction(offscreen_speaker_fraction, "offscreen_speaker_fraction");
  fraction(overlap_speech_fraction, "overlap_speech_fraction");
  fraction(turn_gap_probability, "turn_gap_probability");
  fraction(voice_rotation, "voice_rotation");
  range(frames_per_track, "frames_per_track");
  range(utterance_duration_s, "utterance_duration_s");
  if (!(turn_gap_s.lo >= 0 && turn_gap_s.hi >= turn_gap_s.lo)) throw InvalidArgument("synth: bad turn_gap_s");
  if (!(clip_duration_s > 0 && fps > 0 && hop_s > 0)) throw InvalidArgument("synth: durations and rates must be positive");
  if (segments_per_utterance < 1) throw InvalidArgument("synth: segments_per_utterance must be >= 1");
}

namespace {

using Rng = std::mt19937_64;

// Isotropic noise with unit expected norm, so sigma reads as the noise-to-signal norm ratio at any D.
void add_noise(std::span<float> v, double sigma, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(static_cast<double>(v.size())));
  for (float& x : v) x = static_cast<float>(x + sigma * n(rng));
}

std::vector<float> random_unit(int dim, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(dim));
  std::normal_distribution<double> n(0.0, 1.0);
  for (float& x : v) x = static_cast<float>(n(rng));
  normalize_in_place(v);
  return v;
}

// Random orthogonal matrix by Gram-Schmidt on Gaussian rows.
EmbeddingMatrix random_rotation(int dim, Rng& rng) {
  EmbeddingMatrix q(static_cast<std::size_t>(dim), static_cast<std::size_t>(dim));
  std::normal_distribution<double> n(0.0, 1.0);
  for (std::size_t r = 0; r < q.rows; ++r) {
    std::vector<double> v(q.cols);
    for (auto& x : v) x = n(rng);
    for (std::size_t p = 0; p < r; ++p) {
      double d = 0;
      for (std::size_t c = 0; c < q.cols; ++c) d += v[c] * q(p, c);
      for (std::size_t c = 0; c < q.cols; ++c) v[c] -= d * q(p, c);
    }
    double nn = 0;
    for (double x : v) nn += x * x;
    nn = std::sqrt(nn);
    for (std::size_t c = 0; c < q.cols; ++c) q(r, c) = static_cast<float>(v[c] / nn);
  }
  return q;
}

std::vector<float> voice_anchor(std::span<const float> face, const EmbeddingMatrix& rotation, double amount) {
  std::vector<float> out(face.size());
  for (std::size_t r = 0; r < face.size(); ++r) {
    double rotated = 0;
    for (std::size_t c = 0; c < face.size(); ++c) rotated += rotation(r, c) * face[c];
    out[r] = static_cast<float>((1.0 - amount) * face[r] + amount * rotated);
  }
  normalize_in_place(out);
  return out;
}

std::string pad3(int i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
}

struct TimedUtterance {
  std::size_t speaker;  // index into speaker list
  double start_s;
  double end_s;
};

std::vector<std::size_t> speaker_sequence(std::size_t n_visible, std::size_t n_offscreen, int per_speaker,
                                          std::size_t n_offscreen_utts, Rng& rng) {
  std::vector<std::size_t> seq;
  for (std::size_t s = 0; s < n_visible; ++s)
    for (int k = 0; k < per_speaker; ++k) seq.push_back(s);
  for (std::size_t k = 0; k < n_offscreen_utts; ++k) seq.push_back(n_visible + k % std::max<std::size_t>(n_offscreen, 1));
  std::shuffle(seq.begin(), seq.end(), rng);
  // Break up immediate repeats where a later swap partner exists.
  for (std::size_t i = 1; i < seq.size(); ++i) {
    if (seq[i] != seq[i - 1]) continue;
    for (std::size_t j = i + 1; j < seq.size(); ++j)
      if (seq[j] != seq[i - 1]) {
        std::swap(seq[i], seq[j]);
        break;
      }
  }
  return seq;
}

}  // namespace

SynthCorpus generate_corpus(const SynthConfig& cfg) {
  cfg.validate();
  SynthCorpus out;
  Corpus& corpus = out.corpus;
  corpus.embedding_dim = cfg.dim;
  corpus.seed = cfg.seed;

  Rng global(cfg.seed);
  const EmbeddingMatrix rotation = random_rotation(cfg.dim, global);
  const std::size_t D = static_cast<std::size_t>(cfg.dim);

  for (int ci = 0; ci < cfg.n_clips; ++ci) {
    std::seed_seq seq{static_cast<std::uint64_t>(cfg.seed), static_cast<std::uint64_t>(ci), std::uint64_t{0x5eed}};
    Rng rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](const Range& r) { return r.lo + (r.hi - r.lo) * unit(rng); };

    Clip clip;
    clip.id = "clip_" + pad3(ci);
    clip.duration_s = cfg.clip_duration_s;
    clip.fps = cfg.fps;
    clip.sample_rate_hz = cfg.sample_rate_hz;
    const std::string prefix = clip.id + "/";
    SynthTruth::ClipTruth truth;

    const std::size_t n_visible = static_cast<std::size_t>(cfg.identities_per_clip);
    const std::size_t n_visible_utts = n_visible * static_cast<std::size_t>(cfg.utterances_per_identity);
    std::size_t n_off_utts = 0;
    if (cfg.offscreen_speaker_fraction >= 1.0)
      n_off_utts = std::max<std::size_t>(n_visible_utts, static_cast<std::size_t>(cfg.utterances_per_identity));
    else if (n_visible_utts > 0)
      n_off_utts = static_cast<std::size_t>(std::llround(static_cast<double>(n_visible_utts) *
                                                         cfg.offscreen_speaker_fraction /
                                                         (1.0 - cfg.offscreen_speaker_fraction)));
    const std::size_t per = static_cast<std::size_t>(std::max(cfg.utterances_per_identity, 1));
    const std::size_t n_off = n_off_utts == 0 ? 0 : (n_off_utts + per - 1) / per;

    for (std::size_t s = 0; s < n_visible; ++s) truth.speaker_ids.push_back("id" + std::to_string(s));
    for (std::size_t s = 0; s < n_off; ++s) {
      truth.speaker_ids.push_back("off" + std::to_string(s));
      clip.offscreen_ids.push_back(truth.speaker_ids.back());
    }
    truth.face_anchors = EmbeddingMatrix(truth.speaker_ids.size(), D);
    truth.voice_anchors = EmbeddingMatrix(truth.speaker_ids.size(), D);
    for (std::size_t s = 0; s < truth.speaker_ids.size(); ++s) {
      const auto a = random_unit(cfg.dim, rng);
      std::copy(a.begin(), a.end(), truth.face_anchors.row(s).begin());
      const auto v = voice_anchor(a, rotation, cfg.voice_rotation);
      std::copy(v.begin(), v.end(), truth.voice_anchors.row(s).begin());
    }

    // Face tracks: track j of each identity is placed inside the j-th slot of the clip.
    const int max_frame = clip.max_frame();
    for (std::size_t s = 0; s < n_visible; ++s) {
      for (int j = 0; j < cfg.tracks_per_identity; ++j) {
        const int slot_lo = max_frame * j / cfg.tracks_per_identity;
        const int slot_hi = max_frame * (j + 1) / cfg.tracks_per_identity;
        const int slot_len = std::max(slot_hi - slot_lo, 1);
        int len = static_cast<int>(std::llround(uniform(cfg.frames_per_track)));
        len = std::clamp(len, 1, slot_len);
        std::uniform_int_distribution<int> start_pick(slot_lo, slot_lo + slot_len - len);
        FaceTrack t;
        t.identity_id = truth.speaker_ids[s];
        t.track_index = j;
        t.track_id = t.identity_id + "_t" + std::to_string(j);
        t.start_frame = start_pick(rng);
        t.end_frame = t.start_frame + len - 1;
        t.crop_meta = CropMeta{3, 112, 112};
        t.frame_embeddings = prefix + "track_" + t.track_id + ".fvem";
        EmbeddingMatrix frames(static_cast<std::size_t>(len), D);
        std::vector<std::uint8_t> corrupt(static_cast<std::size_t>(len));
        const double bx = 100 + 400 * unit(rng), by = 50 + 200 * unit(rng);
        for (int f = 0; f < len; ++f) {
          auto row = frames.row(static_cast<std::size_t>(f));
          std::copy(truth.face_anchors.row(s).begin(), truth.face_anchors.row(s).end(), row.begin());
          corrupt[static_cast<std::size_t>(f)] = unit(rng) < cfg.corrupt_frame_fraction ? 1 : 0;
          add_noise(row, corrupt[static_cast<std::size_t>(f)] ? cfg.face_noise_sigma_corrupt : cfg.face_noise_sigma_clean,
                    rng);
          normalize_in_place(row);
          if (cfg.emit_boxes) t.boxes.push_back({bx + 2.0 * std::sin(f * 0.1), by, 112, 112});
        }
        truth.frame_corrupt[t.track_id] = std::move(corrupt);
        corpus.embeddings[t.frame_embeddings] = std::move(frames);
        clip.tracks.push_back(std::move(t));
      }
    }

    // Utterance timeline.
    std::vector<TimedUtterance> timeline;
    const auto order = speaker_sequence(n_visible, n_off, cfg.utterances_per_identity, n_off_utts, rng);
    double cursor = 0.2 + 0.8 * unit(rng);
    for (std::size_t k = 0; k < order.size(); ++k) {
      const double dur = uniform(cfg.utterance_duration_s);
      double start = cursor;
      if (!timeline.empty()) {
        const auto& prev = timeline.back();
        if (unit(rng) < cfg.overlap_speech_fraction) {
          const double max_ov = 0.5 * std::min(dur, prev.end_s - prev.start_s);
          start = prev.end_s - max_ov * (0.4 + 0.6 * unit(rng));
        } else if (unit(rng) < cfg.turn_gap_probability) {
          start = prev.end_s + uniform(cfg.turn_gap_s);
        } else {
          start = prev.end_s;
        }
      }
      const double end = start + dur;
      if (end > cfg.clip_duration_s - 0.1) break;
      timeline.push_back({order[k], start, end});
      cursor = end;
    }

    for (std::size_t k = 0; k < timeline.size(); ++k) {
      const auto& tu = timeline[k];
      Utterance u;
      u.utt_id = "u" + pad3(static_cast<int>(k));
      u.speaker_id = truth.speaker_ids[tu.speaker];
      u.start_s = tu.start_s;
      u.end_s = tu.end_s;
      u.segment_embeddings = prefix + "utt_" + u.utt_id + ".fvem";
      EmbeddingMatrix segs(static_cast<std::size_t>(cfg.segments_per_utterance), D);
      for (std::size_t m = 0; m < segs.rows; ++m) {
        auto row = segs.row(m);
        std::copy(truth.voice_anchors.row(tu.speaker).begin(), truth.voice_anchors.row(tu.speaker).end(), row.begin());
        add_noise(row, cfg.voice_noise_sigma, rng);
        normalize_in_place(row);
      }
      corpus.embeddings[u.segment_embeddings] = std::move(segs);
      clip.utterances.push_back(std::move(u));
    }

    // Audio-derived streams sampled at hop centres.
    const auto n_hops = static_cast<std::size_t>(std::llround(cfg.clip_duration_s / cfg.hop_s));
    EmbeddingMatrix energy(n_hops, 1);
    EmbeddingMatrix stream(n_hops, D);
    std::normal_distribution<double> jitter(0.0, 1.0);
    for (std::size_t h = 0; h < n_hops; ++h) {
      const double t = (static_cast<double>(h) + 0.5) * cfg.hop_s;
      double e = 0.02 + 0.01 * std::abs(jitter(rng));
      auto row = stream.row(h);
      for (const auto& tu : timeline) {
        if (t < tu.start_s || t >= tu.end_s) continue;
        e += std::max(0.0, 1.0 + 0.2 * jitter(rng));
        std::vector<float> v(truth.voice_anchors.row(tu.speaker).begin(), truth.voice_anchors.row(tu.speaker).end());
        add_noise(v, cfg.stream_noise_sigma, rng);
        normalize_in_place(v);
        for (std::size_t c = 0; c < D; ++c) row[c] += v[c];
      }
      energy(h, 0) = static_cast<float>(e);
    }
    if (n_hops > 0) {
      clip.audio_streams.hop_s = cfg.hop_s;
      clip.audio_streams.energy = prefix + "energy.fvem";
      clip.audio_streams.speaker_stream = prefix + "speaker_stream.fvem";
      corpus.embeddings[*clip.audio_streams.energy] = std::move(energy);
      corpus.embeddings[*clip.audio_streams.speaker_stream] = std::move(stream);
    }

    out.truth.clips[clip.id] = std::move(truth);
    corpus.clips.push_back(std::move(clip));
  }
  return out;
}

void save_synthetic(const SynthCorpus& synth, const SynthConfig& cfg, const std::filesystem::path& dir) {
  save_corpus(synth.corpus, dir);
  nlohmann::json gt = {{"seed", cfg.seed}, {"prng", "std::mt19937_64, per-clip seed_seq{seed, clip_index, 0x5eed}"},
                       {"clips", nlohmann::json::array()}};
  for (const auto& clip : synth.corpus.clips) {
    const auto& truth = synth.truth.clips.at(clip.id);
    const std::string face_file = clip.id + "/face_anchors.fvem";
    const std::string voice_file = clip.id + "/voice_anchors.fvem";
    if (truth.face_anchors.rows > 0) {
      write_embeddings(dir / face_file, truth.face_anchors);
      write_embeddings(dir / voice_file, truth.voice_anchors);
    }
    nlohmann::json quality = nlohmann::json::object();
    for (const auto& [track, flags] : truth.frame_corrupt) {
      nlohmann::json clean = nlohmann::json::array();
      for (auto f : flags) clean.push_back(f ? 0 : 1);
      quality[track] = clean;
    }
    nlohmann::json boundaries = nlohmann::json::array();
    for (const auto& u : clip.utterances)
      boundaries.push_back({{"utt_id", u.utt_id}, {"speaker_id", u.speaker_id}, {"start_s", u.start_s}, {"end_s", u.end_s}});
    nlohmann::json jc = {{"clip_id", clip.id},
                         {"speaker_ids", truth.speaker_ids},
                         {"frame_quality_clean", quality},
                         {"boundaries", boundaries}};
    if (truth.face_anchors.rows > 0) {
      jc["face_anchors"] = face_file;
      jc["voice_anchors"] = voice_file;
    }
    gt["clips"].push_back(std::move(jc));
  }
  std::ofstream out(dir / "ground_truth.json", std::ios::trunc);
  out << gt.dump(2) << '\n';
}

std::vector<FrameDetection> ground_truth_detections(const Corpus& corpus) { return ground_truth_positives(corpus); }

}  // namespace slasd
