// slasd: batch entry points for the embedding-level speaker attribution pipeline.
//
// Exit codes: 0 ok, 2 usage, 3 data/validation, 4 runtime.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "slasd/config_io.hpp"
#include "slasd/corpus.hpp"
#include "slasd/error.hpp"
#include "slasd/finetune.hpp"
#include "slasd/model.hpp"
#include "slasd/pipeline.hpp"
#include "slasd/segmentation.hpp"
#include "slasd/synthgen.hpp"
#include "slasd/training.hpp"

namespace fs = std::filesystem;
using namespace slasd;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kRuntime = 4 };

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Options {
  std::string corpus, config, out, checkpoint, utterances, scores, detections;
  std::string front_end = "vad+scd";
  std::string match = "identity";
  std::optional<std::uint64_t> seed;
  double iou = 0.5;
  double min_overlap = 0.15;
};

// Collects what a command did; written next to its outputs.
struct RunManifest {
  std::string command;
  json config;
  std::string started_at = utc_now();
  std::vector<std::string> outputs;

  void write(const Options& o, const fs::path& where) const {
    json j = {{"command", command},
              {"config_hash", config_hash(config)},
              {"config", config},
              {"corpus", o.corpus},
              {"seed", o.seed ? json(*o.seed) : json(nullptr)},
              {"started_at", started_at},
              {"finished_at", utc_now()},
              {"outputs", outputs}};
    write_json_file(where, j);
  }
};

json load_config(const std::string& path) { return path.empty() ? json::object() : read_json_file(path); }

fs::path manifest_path(const fs::path& out) {
  if (fs::is_directory(out)) return out / "run_manifest.json";
  return fs::path(out.string() + ".manifest.json");
}

int cmd_generate(const Options& o) {
  json raw = load_config(o.config);
  if (o.seed) raw["seed"] = *o.seed;
  const SynthConfig cfg = synth_config_from_json(raw);
  const auto synth = generate_corpus(cfg);
  save_synthetic(synth, cfg, o.out);
  RunManifest m{"generate", to_json(cfg)};
  m.outputs = {(fs::path(o.out) / "manifest.json").string(), (fs::path(o.out) / "ground_truth.json").string()};
  m.write(o, manifest_path(o.out));
  std::cout << "generated " << synth.corpus.clips.size() << " clips in " << o.out << '\n';
  return kOk;
}

int cmd_segment(const Options& o) {
  const Corpus corpus = load_manifest(o.corpus);
  const SegConfig cfg = seg_config_from_json(load_config(o.config));
  const FrontEnd fe = front_end_from_string(o.front_end);
  const std::string hash = config_hash(to_json(cfg));
  fs::create_directories(o.out);

  RunManifest m{"segment", to_json(cfg)};
  m.config["front_end"] = o.front_end;
  json summary = {{"config_hash", hash}, {"front_end", o.front_end}, {"clips", json::object()}};
  double matched = 0;
  std::size_t n_refs = 0;
  for (const auto& clip : corpus.clips) {
    const auto hyps = segment_clip(corpus, clip, fe, cfg);
    const auto refs = reference_utterances(corpus, clip);
    json j = {{"config_hash", hash}, {"clip_id", clip.id}, {"front_end", o.front_end}, {"hypotheses", json::array()}};
    for (const auto& h : hyps) j["hypotheses"].push_back(to_json(h));
    if (!refs.empty()) {
      const double r = utterance_recall(hyps, refs);
      j["recall_percent"] = r;
      summary["clips"][clip.id] = r;
      matched += r / 100.0 * static_cast<double>(refs.size());
      n_refs += refs.size();
    }
    const auto path = fs::path(o.out) / (clip.id + ".json");
    write_json_file(path, j);
    m.outputs.push_back(path.string());
  }
  const double recall = n_refs ? 100.0 * matched / static_cast<double>(n_refs) : 100.0;
  summary["recall_percent"] = recall;
  write_json_file(fs::path(o.out) / "summary.json", summary);
  m.outputs.push_back((fs::path(o.out) / "summary.json").string());
  m.write(o, fs::path(o.out) / "run_manifest.json");
  std::printf("recall_percent %.6f\n", recall);
  return kOk;
}

int cmd_finetune(const Options& o) {
  const Corpus corpus = load_manifest(o.corpus);
  json raw = load_config(o.config);
  if (o.seed) raw["seed"] = *o.seed;
  const FinetuneConfig cfg = finetune_config_from_json(raw);
  const auto data = finetune_data_from_corpus(corpus, 64, cfg.seed);
  const auto result = finetune(data, cfg);
  fs::create_directories(o.out);
  save_projections(result.params, (fs::path(o.out) / "projections").string());

  json log = {{"config_hash", config_hash(to_json(cfg))},
              {"round_loss", result.round_loss},
              {"round_pseudo_classes", result.round_pseudo_classes},
              {"recall_at_1_percent", crossmodal_recall_at_1(data, result.params)}};
  write_json_file(fs::path(o.out) / "finetune_log.json", log);
  RunManifest m{"finetune", to_json(cfg)};
  m.outputs = {(fs::path(o.out) / "projections").string(), (fs::path(o.out) / "finetune_log.json").string()};
  m.write(o, fs::path(o.out) / "run_manifest.json");
  return kOk;
}

int cmd_train(const Options& o) {
  const Corpus corpus = load_manifest(o.corpus);
  json raw = load_config(o.config);
  if (o.seed) raw["seed"] = *o.seed;
  const TrainConfig cfg = train_config_from_json(raw);
  const auto result = train(corpus, cfg);
  fs::create_directories(o.out);
  save_checkpoint(result.params, fs::path(o.out) / "checkpoint");

  const auto csv = fs::path(o.out) / "loss.csv";
  std::ofstream out(csv);
  out << "# config_hash " << config_hash(to_json(cfg)) << "\nepoch,lr,loss\n";
  char line[96];
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", e, result.epoch_lr[e], result.epoch_loss[e]);
    out << line;
  }
  RunManifest m{"train", to_json(cfg)};
  m.outputs = {(fs::path(o.out) / "checkpoint").string(), csv.string()};
  m.config["n_batches"] = result.n_batches;
  m.write(o, fs::path(o.out) / "run_manifest.json");
  return kOk;
}

// Hypotheses from a `segment` output directory, keyed by clip id.
std::map<std::string, std::vector<HypUtterance>> read_hypotheses(const fs::path& dir, const Corpus& corpus) {
  std::map<std::string, std::vector<HypUtterance>> hyps;
  for (const auto& clip : corpus.clips) {
    const auto path = dir / (clip.id + ".json");
    if (!fs::exists(path)) throw ValidationError(path.string() + ": missing hypotheses for clip " + clip.id);
    auto& v = hyps[clip.id];
    const json j = read_json_file(path);
    for (const auto& h : j.at("hypotheses")) v.push_back(hyp_from_json(h));
  }
  return hyps;
}

int cmd_score(const Options& o) {
  if (o.checkpoint.empty()) throw CLI::RequiredError("--checkpoint");
  const Corpus corpus = load_manifest(o.corpus);
  const auto params = load_checkpoint(o.checkpoint);
  if (static_cast<std::size_t>(params.config.dim) != corpus.embedding_dim)
    throw ValidationError("checkpoint dim " + std::to_string(params.config.dim) + " != corpus embedding_dim " +
                          std::to_string(corpus.embedding_dim));
  const SegConfig seg = seg_config_from_json(load_config(o.config));
  const std::uint64_t seed = o.seed.value_or(0);

  FrontEndRun run;
  std::string label = o.front_end;
  if (!o.utterances.empty()) {
    run.hyps = read_hypotheses(o.utterances, corpus);
    label = "external";
    for (const auto& clip : corpus.clips) {
      auto s = score_hypotheses(corpus, clip, run.hyps.at(clip.id), params, seed);
      run.scores.insert(run.scores.end(), s.begin(), s.end());
    }
  } else {
    run = run_front_end(corpus, params, front_end_from_string(o.front_end), seg, seed);
  }

  RunManifest m{"score", {{"segmentation", to_json(seg)}, {"front_end", label}, {"checkpoint", o.checkpoint}}};
  json j = {{"config_hash", config_hash(m.config)}, {"front_end", label}, {"hypotheses", json::object()},
            {"scores", json::array()}};
  for (const auto& [clip_id, hs] : run.hyps) {
    j["hypotheses"][clip_id] = json::array();
    for (const auto& h : hs) j["hypotheses"][clip_id].push_back(to_json(h));
  }
  for (const auto& s : run.scores) j["scores"].push_back(to_json(s));
  write_json_file(o.out, j);
  m.outputs = {o.out};
  m.write(o, manifest_path(o.out));
  return kOk;
}

int cmd_eval(const Options& o) {
  if (o.scores.empty() == o.detections.empty()) throw CLI::ValidationError("exactly one of --scores / --detections");
  const Corpus corpus = load_manifest(o.corpus);
  EvalOptions opts;
  opts.mode = o.match == "box" ? MatchMode::box_iou : MatchMode::identity;
  opts.iou_threshold = o.iou;
  opts.min_overlap_ratio = o.min_overlap;

  EvalReport report;
  if (!o.scores.empty()) {
    const json in = read_json_file(o.scores);
    std::map<std::string, std::vector<HypUtterance>> hyps;
    for (const auto& [clip_id, hs] : in.at("hypotheses").items())
      for (const auto& h : hs) hyps[clip_id].push_back(hyp_from_json(h));
    std::vector<ScoreResult> scores;
    for (const auto& s : in.at("scores")) scores.push_back(score_result_from_json(s));
    opts.front_end = in.value("front_end", "unnamed");
    report = evaluate_run(corpus, hyps, scores, opts);
  } else {
    std::vector<FrameDetection> dets;
    const json in = read_json_file(o.detections);
    for (const auto& d : in.at("detections")) dets.push_back(detection_from_json(d));
    const auto gts = ground_truth_positives(corpus);
    report.front_end = "detections";
    report.map_percent = voc_map(dets, gts, opts.mode, opts.iou_threshold);
    report.n_detections = dets.size();
    report.n_groundtruth = gts.size();
  }

  RunManifest m{"eval",
                {{"match", o.match}, {"iou", o.iou}, {"min_overlap_ratio", o.min_overlap},
                 {"input", o.scores.empty() ? o.detections : o.scores}}};
  json j = to_json(report);
  j["config_hash"] = config_hash(m.config);
  j["corpus"] = o.corpus;
  write_json_file(o.out, j);
  m.outputs = {o.out};
  m.write(o, manifest_path(o.out));
  std::printf("map_percent %.4f recall_percent %.4f\n", report.map_percent, report.recall_percent);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slasd: embedding-level active speaker detection pipeline"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool needs_corpus) {
    auto* c = sub->add_option("--corpus", o.corpus, "corpus manifest.json");
    if (needs_corpus) c->required()->check(CLI::ExistingFile);
    sub->add_option("--config", o.config, "JSON config (defaults when omitted)")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "output path")->required();
    sub->add_option("--seed", o.seed, "override the config seed");
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic corpus");
  add_common(gen, false);
  auto* seg = app.add_subcommand("segment", "segment utterances and report recall");
  add_common(seg, true);
  seg->add_option("--front-end", o.front_end, "groundtruth | vad+scd | vad-only");
  auto* ft = app.add_subcommand("finetune", "self-lifting projection finetuning");
  add_common(ft, true);
  auto* tr = app.add_subcommand("train", "train the attribution head");
  add_common(tr, true);
  auto* sc = app.add_subcommand("score", "score utterances against visible identities");
  add_common(sc, true);
  sc->add_option("--checkpoint", o.checkpoint, "model checkpoint directory")->check(CLI::ExistingDirectory);
  sc->add_option("--utterances", o.utterances, "segment output directory (else segment in-process)")
      ->check(CLI::ExistingDirectory);
  sc->add_option("--front-end", o.front_end, "groundtruth | vad+scd | vad-only");
  auto* ev = app.add_subcommand("eval", "frame-level mAP evaluation");
  add_common(ev, true);
  ev->add_option("--scores", o.scores, "score output JSON")->check(CLI::ExistingFile);
  ev->add_option("--detections", o.detections, "detections JSON")->check(CLI::ExistingFile);
  ev->add_option("--match", o.match, "identity | box")->check(CLI::IsMember({"identity", "box"}));
  ev->add_option("--iou", o.iou, "box-mode IoU threshold");
  ev->add_option("--min-overlap-ratio", o.min_overlap, "overlap rule for utterance recall");

  try {
    app.parse(argc, argv);
    if (*gen) return cmd_generate(o);
    if (*seg) return cmd_segment(o);
    if (*ft) return cmd_finetune(o);
    if (*tr) return cmd_train(o);
    if (*sc) return cmd_score(o);
    return cmd_eval(o);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n' << app.help();
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed input: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
