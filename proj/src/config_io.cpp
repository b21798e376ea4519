#include "slasd/config_io.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace slasd {
namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw InvalidArgument(std::string(what) + ": expected a JSON object");
  std::set<std::string> k(known.begin(), known.end());
  for (const auto& [key, _] : j.items())
    if (!k.count(key)) throw InvalidArgument(std::string(what) + ": unknown key '" + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad value for '") + key + "': " + e.what());
  }
}

void read_range(const json& j, const char* key, Range& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2) throw InvalidArgument(std::string("'") + key + "' must be [lo, hi]");
  out = {v[0].get<double>(), v[1].get<double>()};
}

ModelConfig model_config_from_json(const json& j) {
  reject_unknown(j, {"dim", "n_heads", "n_encoder_layers", "ffn_hidden", "max_frames_per_identity"}, "model config");
  ModelConfig c;
  read(j, "dim", c.dim);
  read(j, "n_heads", c.n_heads);
  read(j, "n_encoder_layers", c.n_encoder_layers);
  read(j, "ffn_hidden", c.ffn_hidden);
  read(j, "max_frames_per_identity", c.max_frames_per_identity);
  c.validate();
  return c;
}

json model_to_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"n_heads", c.n_heads},
          {"n_encoder_layers", c.n_encoder_layers},
          {"ffn_hidden", c.ffn_hidden},
          {"max_frames_per_identity", c.max_frames_per_identity}};
}

}  // namespace

SynthConfig synth_config_from_json(const json& j) {
  reject_unknown(j,
                 {"n_clips", "identities_per_clip", "tracks_per_identity", "frames_per_track_range",
                  "utterances_per_identity", "utterance_duration_range_s", "clip_duration_s", "D",
                  "face_noise_sigma_clean", "face_noise_sigma_corrupt", "corrupt_frame_fraction", "voice_noise_sigma",
                  "offscreen_speaker_fraction", "overlap_speech_fraction", "seed", "fps", "sample_rate_hz", "hop_s",
                  "turn_gap_probability", "turn_gap_range_s", "stream_noise_sigma", "voice_rotation",
                  "segments_per_utterance", "emit_boxes"},
                 "synth config");
  SynthConfig c;
  read(j, "n_clips", c.n_clips);
  read(j, "identities_per_clip", c.identities_per_clip);
  read(j, "tracks_per_identity", c.tracks_per_identity);
  read_range(j, "frames_per_track_range", c.frames_per_track);
  read(j, "utterances_per_identity", c.utterances_per_identity);
  read_range(j, "utterance_duration_range_s", c.utterance_duration_s);
  read(j, "clip_duration_s", c.clip_duration_s);
  read(j, "D", c.dim);
  read(j, "face_noise_sigma_clean", c.face_noise_sigma_clean);
  read(j, "face_noise_sigma_corrupt", c.face_noise_sigma_corrupt);
  read(j, "corrupt_frame_fraction", c.corrupt_frame_fraction);
  read(j, "voice_noise_sigma", c.voice_noise_sigma);
  read(j, "offscreen_speaker_fraction", c.offscreen_speaker_fraction);
  read(j, "overlap_speech_fraction", c.overlap_speech_fraction);
  read(j, "seed", c.seed);
  read(j, "fps", c.fps);
  read(j, "sample_rate_hz", c.sample_rate_hz);
  read(j, "hop_s", c.hop_s);
  read(j, "turn_gap_probability", c.turn_gap_probability);
  read_range(j, "turn_gap_range_s", c.turn_gap_s);
  read(j, "stream_noise_sigma", c.stream_noise_sigma);
  read(j, "voice_rotation", c.voice_rotation);
  read(j, "segments_per_utterance", c.segments_per_utterance);
  read(j, "emit_boxes", c.emit_boxes);
  c.validate();
  return c;
}

json to_json(const SynthConfig& c) {
  return {{"n_clips", c.n_clips},
          {"identities_per_clip", c.identities_per_clip},
          {"tracks_per_identity", c.tracks_per_identity},
          {"frames_per_track_range", {c.frames_per_track.lo, c.frames_per_track.hi}},
          {"utterances_per_identity", c.utterances_per_identity},
          {"utterance_duration_range_s", {c.utterance_duration_s.lo, c.utterance_duration_s.hi}},
          {"clip_duration_s", c.clip_duration_s},
          {"D", c.dim},
          {"face_noise_sigma_clean", c.face_noise_sigma_clean},
          {"face_noise_sigma_corrupt", c.face_noise_sigma_corrupt},
          {"corrupt_frame_fraction", c.corrupt_frame_fraction},
          {"voice_noise_sigma", c.voice_noise_sigma},
          {"offscreen_speaker_fraction", c.offscreen_speaker_fraction},
          {"overlap_speech_fraction", c.overlap_speech_fraction},
          {"seed", c.seed},
          {"fps", c.fps},
          {"sample_rate_hz", c.sample_rate_hz},
          {"hop_s", c.hop_s},
          {"turn_gap_probability", c.turn_gap_probability},
          {"turn_gap_range_s", {c.turn_gap_s.lo, c.turn_gap_s.hi}},
          {"stream_noise_sigma", c.stream_noise_sigma},
          {"voice_rotation", c.voice_rotation},
          {"segments_per_utterance", c.segments_per_utterance},
          {"emit_boxes", c.emit_boxes}};
}

SegConfig seg_config_from_json(const json& j) {
  reject_unknown(j,
                 {"vad_threshold_margin", "vad_hangover_s", "vad_min_speech_s", "vad_smoothing_hops",
                  "vad_noise_percentile", "scd_window_s", "scd_hop_s", "scd_peak_threshold_mode", "scd_threshold",
                  "scd_kappa", "min_utt_s", "max_utt_s", "segments_per_utterance"},
                 "segmentation config");
  SegConfig c;
  read(j, "vad_threshold_margin", c.vad_threshold_margin);
  read(j, "vad_hangover_s", c.vad_hangover_s);
  read(j, "vad_min_speech_s", c.vad_min_speech_s);
  read(j, "vad_smoothing_hops", c.vad_smoothing_hops);
  read(j, "vad_noise_percentile", c.vad_noise_percentile);
  read(j, "scd_window_s", c.scd_window_s);
  read(j, "scd_hop_s", c.scd_hop_s);
  if (j.contains("scd_peak_threshold_mode")) {
    const auto m = j.at("scd_peak_threshold_mode").get<std::string>();
    if (m == "absolute")
      c.scd_threshold_mode = ThresholdMode::absolute;
    else if (m == "adaptive")
      c.scd_threshold_mode = ThresholdMode::adaptive;
    else
      throw InvalidArgument("scd_peak_threshold_mode must be 'absolute' or 'adaptive'");
  }
  read(j, "scd_threshold", c.scd_threshold);
  read(j, "scd_kappa", c.scd_kappa);
  if (j.contains("min_utt_s") && !j.at("min_utt_s").is_null()) c.min_utt_s = j.at("min_utt_s").get<double>();
  if (j.contains("max_utt_s") && !j.at("max_utt_s").is_null()) c.max_utt_s = j.at("max_utt_s").get<double>();
  read(j, "segments_per_utterance", c.segments_per_utterance);
  c.validate();
  return c;
}

json to_json(const SegConfig& c) {
  json j = {{"vad_threshold_margin", c.vad_threshold_margin},
            {"vad_hangover_s", c.vad_hangover_s},
            {"vad_min_speech_s", c.vad_min_speech_s},
            {"vad_smoothing_hops", c.vad_smoothing_hops},
            {"vad_noise_percentile", c.vad_noise_percentile},
            {"scd_window_s", c.scd_window_s},
            {"scd_hop_s", c.scd_hop_s},
            {"scd_peak_threshold_mode", c.scd_threshold_mode == ThresholdMode::absolute ? "absolute" : "adaptive"},
            {"scd_threshold", c.scd_threshold},
            {"scd_kappa", c.scd_kappa},
            {"min_utt_s", nullptr},
            {"max_utt_s", nullptr},
            {"segments_per_utterance", c.segments_per_utterance}};
  if (c.min_utt_s) j["min_utt_s"] = *c.min_utt_s;
  if (c.max_utt_s) j["max_utt_s"] = *c.max_utt_s;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j, {"seed", "epochs", "lr", "lr_decay", "lr_decay_every", "skip_single_identity_clips", "model"},
                 "train config");
  TrainConfig c;
  read(j, "seed", c.seed);
  read(j, "epochs", c.epochs);
  read(j, "lr", c.lr);
  read(j, "lr_decay", c.lr_decay);
  read(j, "lr_decay_every", c.lr_decay_every);
  read(j, "skip_single_identity_clips", c.skip_single_identity_clips);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  c.validate();
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"seed", c.seed},
          {"epochs", c.epochs},
          {"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"lr_decay_every", c.lr_decay_every},
          {"skip_single_identity_clips", c.skip_single_identity_clips},
          {"model", model_to_json(c.model)}};
}

FinetuneConfig finetune_config_from_json(const json& j) {
  reject_unknown(j,
                 {"rounds", "k", "kmeans_max_iter", "steps_per_round", "classes_per_batch", "faces_per_class",
                  "voices_per_class", "lr", "init_noise", "ms_alpha", "ms_beta", "ms_lambda", "ms_epsilon", "seed"},
                 "finetune config");
  FinetuneConfig c;
  read(j, "rounds", c.rounds);
  read(j, "k", c.k);
  read(j, "kmeans_max_iter", c.kmeans_max_iter);
  read(j, "steps_per_round", c.steps_per_round);
  read(j, "classes_per_batch", c.classes_per_batch);
  read(j, "faces_per_class", c.faces_per_class);
  read(j, "voices_per_class", c.voices_per_class);
  read(j, "lr", c.lr);
  read(j, "init_noise", c.init_noise);
  read(j, "ms_alpha", c.ms.alpha);
  read(j, "ms_beta", c.ms.beta);
  read(j, "ms_lambda", c.ms.lambda);
  read(j, "ms_epsilon", c.ms.epsilon);
  read(j, "seed", c.seed);
  if (c.rounds < 0 || c.k < 1 || c.steps_per_round < 0 || c.classes_per_batch < 2 || c.faces_per_class < 0 ||
      c.voices_per_class < 0 || !(c.lr > 0))
    throw InvalidArgument("finetune config: values out of range");
  return c;
}

json to_json(const FinetuneConfig& c) {
  return {{"rounds", c.rounds},
          {"k", c.k},
          {"kmeans_max_iter", c.kmeans_max_iter},
          {"steps_per_round", c.steps_per_round},
          {"classes_per_batch", c.classes_per_batch},
          {"faces_per_class", c.faces_per_class},
          {"voices_per_class", c.voices_per_class},
          {"lr", c.lr},
          {"init_noise", c.init_noise},
          {"ms_alpha", c.ms.alpha},
          {"ms_beta", c.ms.beta},
          {"ms_lambda", c.ms.lambda},
          {"ms_epsilon", c.ms.epsilon},
          {"seed", c.seed}};
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << j.dump(2) << '\n';
}

std::string config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json to_json(const ScoreResult& r) {
  return {{"clip_id", r.clip_id},
          {"utt_id", r.utt_id},
          {"identity_ids", r.identity_ids},
          {"probabilities", r.probabilities},
          {"logits", r.logits}};
}

ScoreResult score_result_from_json(const json& j) {
  ScoreResult r;
  r.clip_id = j.at("clip_id").get<std::string>();
  r.utt_id = j.at("utt_id").get<std::string>();
  r.identity_ids = j.at("identity_ids").get<std::vector<std::string>>();
  r.probabilities = j.at("probabilities").get<std::vector<double>>();
  if (j.contains("logits")) r.logits = j.at("logits").get<std::vector<double>>();
  if (r.identity_ids.size() != r.probabilities.size())
    throw ValidationError("score result " + r.clip_id + "/" + r.utt_id + ": identity/probability count mismatch");
  return r;
}

json to_json(const HypUtterance& h) {
  json segs = json::array();
  for (std::size_t r = 0; r < h.segment_embeddings.rows; ++r) {
    const auto row = h.segment_embeddings.row(r);
    segs.push_back(std::vector<float>(row.begin(), row.end()));
  }
  return {{"utt_id", h.utt_id}, {"start_s", h.start_s}, {"end_s", h.end_s}, {"speaker_id", h.speaker_id},
          {"segment_embeddings", segs}};
}

HypUtterance hyp_from_json(const json& j) {
  HypUtterance h;
  h.utt_id = j.at("utt_id").get<std::string>();
  h.start_s = j.at("start_s").get<double>();
  h.end_s = j.at("end_s").get<double>();
  h.speaker_id = j.value("speaker_id", std::string(kUnknownSpeaker));
  if (j.contains("segment_embeddings")) {
    const auto rows = j.at("segment_embeddings").get<std::vector<std::vector<float>>>();
    if (!rows.empty()) {
      h.segment_embeddings = EmbeddingMatrix(rows.size(), rows[0].size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) throw ValidationError("hypothesis " + h.utt_id + ": ragged embeddings");
        std::copy(rows[r].begin(), rows[r].end(), h.segment_embeddings.row(r).begin());
      }
    }
  }
  if (!(h.end_s > h.start_s)) throw ValidationError("hypothesis " + h.utt_id + ": end_s must exceed start_s");
  return h;
}

json to_json(const FrameDetection& d) {
  json j = {{"clip_id", d.clip_id}, {"frame_index", d.frame_index}, {"track_id", d.track_id}, {"score", d.score}};
  if (d.box) j["box"] = {d.box->x, d.box->y, d.box->w, d.box->h};
  return j;
}

FrameDetection detection_from_json(const json& j) {
  FrameDetection d;
  d.clip_id = j.at("clip_id").get<std::string>();
  d.frame_index = j.at("frame_index").get<int>();
  d.track_id = j.at("track_id").get<std::string>();
  d.score = j.at("score").get<double>();
  if (!(d.score >= 0.0 && d.score <= 1.0)) throw ValidationError("detection score outside [0, 1]");
  if (j.contains("box")) {
    const auto& b = j.at("box");
    d.box = Box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  }
  return d;
}

json to_json(const EvalReport& r) {
  json per_clip = json::array();
  for (const auto& c : r.per_clip)
    per_clip.push_back({{"clip_id", c.clip_id}, {"ap_percent", c.ap_percent}, {"n_groundtruth", c.n_groundtruth}});
  return {{"front_end", r.front_end},
          {"map_percent", r.map_percent},
          {"recall_percent", r.recall_percent},
          {"per_clip", per_clip},
          {"n_detections", r.n_detections},
          {"n_groundtruth", r.n_groundtruth},
          {"dynamic_subset_track_count", r.dynamic_subset_track_count},
          {"degenerate", r.degenerate}};
}

}  // namespace slasd
