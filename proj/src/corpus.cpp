#include "slasd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "slasd/fvem.hpp"

namespace slasd {

using nlohmann::json;

double iou(const Box& a, const Box& b) {
  const double x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
  const double x1 = std::min(a.x + a.w, b.x + b.w), y1 = std::min(a.y + a.h, b.y + b.h);
  const double inter = std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0);
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::int64_t Utterance::duration_samples(int sample_rate_hz) const {
  return std::llround((end_s - start_s) * sample_rate_hz);
}

int Clip::max_frame() const { return static_cast<int>(std::floor(duration_s * fps + 1e-9)); }

std::vector<std::string> Clip::visible_identities() const {
  std::vector<std::string> ids;
  for (const auto& t : tracks)
    if (std::find(ids.begin(), ids.end(), t.identity_id) == ids.end()) ids.push_back(t.identity_id);
  return ids;
}

const FaceTrack* Clip::find_track(const std::string& track_id) const {
  for (const auto& t : tracks)
    if (t.track_id == track_id) return &t;
  return nullptr;
}

const EmbeddingMatrix& Corpus::matrix(const std::string& key) const {
  auto it = embeddings.find(key);
  if (it == embeddings.end()) throw ValidationError("missing embedding payload: " + key);
  return it->second;
}

const Clip* Corpus::find_clip(const std::string& id) const {
  for (const auto& c : clips)
    if (c.id == id) return &c;
  return nullptr;
}

EmbeddingMatrix identity_frames(const Corpus& corpus, const Clip& clip, const std::string& identity_id) {
  EmbeddingMatrix out;
  out.cols = static_cast<std::size_t>(corpus.embedding_dim);
  for (const auto& t : clip.tracks) {
    if (t.identity_id != identity_id) continue;
    const auto& m = corpus.matrix(t.frame_embeddings);
    out.data.insert(out.data.end(), m.data.begin(), m.data.end());
    out.rows += m.rows;
  }
  return out;
}

namespace {

template <class T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ParseError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ParseError(where + ": bad value for '" + key + "': " + e.what());
  }
}

FaceTrack parse_track(const json& j, const std::string& where) {
  FaceTrack t;
  t.track_id = require<std::string>(j, "track_id", where);
  const std::string w = where + " track '" + t.track_id + "'";
  t.identity_id = require<std::string>(j, "identity_id", w);
  t.track_index = j.value("track_index", 0);
  t.start_frame = require<int>(j, "start_frame", w);
  t.end_frame = require<int>(j, "end_frame", w);
  t.frame_embeddings = require<std::string>(j, "frame_embeddings", w);
  if (j.contains("crop_meta")) {
    const auto& c = j.at("crop_meta");
    t.crop_meta = CropMeta{c.value("channels", 3), c.value("height", 0), c.value("width", 0)};
  }
  if (j.contains("boxes")) {
    for (const auto& b : j.at("boxes")) {
      if (!b.is_array() || b.size() != 4) throw ParseError(w + ": box must be [x, y, w, h]");
      t.boxes.push_back({b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
    }
  }
  return t;
}

Utterance parse_utterance(const json& j, const std::string& where) {
  Utterance u;
  u.utt_id = require<std::string>(j, "utt_id", where);
  const std::string w = where + " utterance '" + u.utt_id + "'";
  u.speaker_id = j.value("speaker_id", std::string(kUnknownSpeaker));
  u.start_s = require<double>(j, "start_s", w);
  u.end_s = require<double>(j, "end_s", w);
  u.segment_embeddings = require<std::string>(j, "segment_embeddings", w);
  return u;
}

Clip parse_clip(const json& j) {
  Clip c;
  c.id = require<std::string>(j, "id", "clip");
  const std::string w = "clip '" + c.id + "'";
  c.duration_s = require<double>(j, "duration_s", w);
  c.fps = j.value("fps", 30.0);
  c.sample_rate_hz = j.value("sample_rate_hz", 16000);
  if (j.contains("tracks"))
    for (const auto& t : j.at("tracks")) c.tracks.push_back(parse_track(t, w));
  if (j.contains("utterances"))
    for (const auto& u : j.at("utterances")) c.utterances.push_back(parse_utterance(u, w));
  if (j.contains("offscreen_ids")) c.offscreen_ids = j.at("offscreen_ids").get<std::vector<std::string>>();
  if (j.contains("audio_streams")) {
    const auto& a = j.at("audio_streams");
    c.audio_streams.hop_s = a.value("hop_s", 0.0);
    if (a.contains("energy")) c.audio_streams.energy = a.at("energy").get<std::string>();
    if (a.contains("speaker_stream")) c.audio_streams.speaker_stream = a.at("speaker_stream").get<std::string>();
  }
  return c;
}

json to_json(const Clip& c) {
  json tracks = json::array();
  for (const auto& t : c.tracks) {
    json jt = {{"track_id", t.track_id},       {"identity_id", t.identity_id}, {"track_index", t.track_index},
               {"start_frame", t.start_frame}, {"end_frame", t.end_frame},     {"frame_embeddings", t.frame_embeddings}};
    if (t.crop_meta)
      jt["crop_meta"] = {{"channels", t.crop_meta->channels}, {"height", t.crop_meta->height}, {"width", t.crop_meta->width}};
    if (!t.boxes.empty()) {
      json boxes = json::array();
      for (const auto& b : t.boxes) boxes.push_back({b.x, b.y, b.w, b.h});
      jt["boxes"] = boxes;
    }
    tracks.push_back(std::move(jt));
  }
  json utts = json::array();
  for (const auto& u : c.utterances)
    utts.push_back({{"utt_id", u.utt_id},
                    {"speaker_id", u.speaker_id},
                    {"start_s", u.start_s},
                    {"end_s", u.end_s},
                    {"segment_embeddings", u.segment_embeddings}});
  json audio = {{"hop_s", c.audio_streams.hop_s}};
  if (c.audio_streams.energy) audio["energy"] = *c.audio_streams.energy;
  if (c.audio_streams.speaker_stream) audio["speaker_stream"] = *c.audio_streams.speaker_stream;
  return {{"id", c.id},         {"duration_s", c.duration_s}, {"fps", c.fps},
          {"sample_rate_hz", c.sample_rate_hz}, {"offscreen_ids", c.offscreen_ids}, {"tracks", tracks},
          {"utterances", utts}, {"audio_streams", audio}};
}

std::vector<std::string> referenced_keys(const Corpus& corpus) {
  std::vector<std::string> keys;
  for (const auto& c : corpus.clips) {
    for (const auto& t : c.tracks) keys.push_back(t.frame_embeddings);
    for (const auto& u : c.utterances) keys.push_back(u.segment_embeddings);
    if (c.audio_streams.energy) keys.push_back(*c.audio_streams.energy);
    if (c.audio_streams.speaker_stream) keys.push_back(*c.audio_streams.speaker_stream);
  }
  return keys;
}

}  // namespace

Corpus load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string() + ": cannot open manifest");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  Corpus corpus;
  corpus.embedding_dim = require<int>(j, "embedding_dim", "manifest");
  if (j.contains("seed") && !j.at("seed").is_null()) corpus.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("clips"))
    for (const auto& c : j.at("clips")) corpus.clips.push_back(parse_clip(c));

  const auto root = path.parent_path();
  for (const auto& key : referenced_keys(corpus)) {
    if (corpus.embeddings.count(key)) continue;
    const auto file = root / key;
    if (!std::filesystem::exists(file)) throw ValidationError("missing embedding file: " + file.string());
    corpus.embeddings.emplace(key, read_embeddings(file));
  }

  const auto violations = validate_corpus(corpus);
  if (!violations.empty()) {
    std::string msg = path.string() + ": " + std::to_string(violations.size()) + " validation error(s): " + violations.front();
    throw ValidationError(msg);
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json clips = json::array();
  for (const auto& c : corpus.clips) clips.push_back(to_json(c));
  json j = {{"embedding_dim", corpus.embedding_dim}, {"clips", clips}};
  if (corpus.seed) j["seed"] = *corpus.seed;
  for (const auto& key : referenced_keys(corpus)) write_embeddings(dir / key, corpus.matrix(key));
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << j.dump(2) << '\n';
}

std::vector<std::string> validate_corpus(const Corpus& corpus) {
  std::vector<std::string> v;
  const auto D = static_cast<std::size_t>(std::max(corpus.embedding_dim, 0));
  if (corpus.embedding_dim <= 0) v.push_back("embedding_dim must be positive");

  // Returns nullptr (and records a violation) when the payload is absent.
  auto payload = [&](const std::string& key, const std::string& where) -> const EmbeddingMatrix* {
    auto it = corpus.embeddings.find(key);
    if (it == corpus.embeddings.end()) {
      v.push_back(where + ": embedding file '" + key + "' not loaded");
      return nullptr;
    }
    if (!it->second.all_finite()) v.push_back(where + ": non-finite embedding values");
    return &it->second;
  };

  std::set<std::string> clip_ids;
  for (const auto& c : corpus.clips) {
    const std::string w = "clip '" + c.id + "'";
    if (!clip_ids.insert(c.id).second) v.push_back(w + ": duplicate clip id");
    if (!(c.duration_s > 0)) v.push_back(w + ": duration_s must be positive");
    if (!(c.fps > 0)) v.push_back(w + ": fps must be positive");
    if (c.sample_rate_hz <= 0) v.push_back(w + ": sample_rate_hz must be positive");

    std::set<std::string> track_ids, identities;
    const int max_frame = c.max_frame();
    for (const auto& t : c.tracks) {
      const std::string tw = w + " track '" + t.track_id + "'";
      identities.insert(t.identity_id);
      if (!track_ids.insert(t.track_id).second) v.push_back(tw + ": duplicate track id");
      if (t.start_frame < 0 || t.end_frame < t.start_frame || t.end_frame > max_frame)
        v.push_back(tw + ": frame range [" + std::to_string(t.start_frame) + ", " + std::to_string(t.end_frame) +
                    "] outside [0, " + std::to_string(max_frame) + "]");
      if (const auto* m = payload(t.frame_embeddings, tw)) {
        if (t.end_frame >= t.start_frame && m->rows != static_cast<std::size_t>(t.frame_count()))
          v.push_back(tw + ": " + std::to_string(m->rows) + " embedding rows for " + std::to_string(t.frame_count()) +
                      " frames");
        if (m->cols != D) v.push_back(tw + ": embedding cols " + std::to_string(m->cols) + " != " + std::to_string(D));
      }
      if (!t.boxes.empty() && t.boxes.size() != static_cast<std::size_t>(std::max(t.frame_count(), 0)))
        v.push_back(tw + ": box count does not match frame count");
    }

    std::set<std::string> utt_ids;
    for (const auto& u : c.utterances) {
      const std::string uw = w + " utterance '" + u.utt_id + "'";
      if (!utt_ids.insert(u.utt_id).second) v.push_back(uw + ": duplicate utterance id");
      if (!(u.end_s > u.start_s)) v.push_back(uw + ": end_s must exceed start_s");
      if (u.start_s < 0 || u.end_s > c.duration_s + 1e-9) v.push_back(uw + ": interval outside [0, duration_s]");
      if (u.speaker_known() && !identities.count(u.speaker_id) &&
          std::find(c.offscreen_ids.begin(), c.offscreen_ids.end(), u.speaker_id) == c.offscreen_ids.end())
        v.push_back(uw + ": speaker '" + u.speaker_id + "' is neither a visible identity nor an off-screen id");
      if (const auto* m = payload(u.segment_embeddings, uw)) {
        if (m->cols != D) v.push_back(uw + ": embedding cols " + std::to_string(m->cols) + " != " + std::to_string(D));
      }
    }

    const auto& a = c.audio_streams;
    if ((a.energy || a.speaker_stream) && !(a.hop_s > 0)) v.push_back(w + ": audio_streams.hop_s must be positive");
    const double expected_rows = a.hop_s > 0 ? c.duration_s / a.hop_s : 0.0;
    auto check_rows = [&](const EmbeddingMatrix& m, const char* name) {
      if (a.hop_s > 0 && std::abs(static_cast<double>(m.rows) - expected_rows) > 1.0 + 1e-9)
        v.push_back(w + ": " + name + " has " + std::to_string(m.rows) + " rows, expected about " +
                    std::to_string(expected_rows));
    };
    if (a.energy)
      if (const auto* m = payload(*a.energy, w + " energy stream")) {
        if (m->cols != 1) v.push_back(w + ": energy stream must have 1 column");
        check_rows(*m, "energy stream");
      }
    if (a.speaker_stream)
      if (const auto* m = payload(*a.speaker_stream, w + " speaker stream")) {
        if (m->cols != D) v.push_back(w + ": speaker stream cols " + std::to_string(m->cols) + " != " + std::to_string(D));
        check_rows(*m, "speaker stream");
      }
  }
  return v;
}

}  // namespace slasd
