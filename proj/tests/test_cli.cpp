#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fixtures.hpp"
#include "slasd/config_io.hpp"
#include "slasd/corpus.hpp"
#include "slasd/fvem.hpp"
#include "slasd/segmentation.hpp"
#include "slasd/synthgen.hpp"

using namespace slasd;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args, const fs::path& dir) {
  const auto log = dir / "stdout.txt";
  const std::string cmd = std::string(SLASD_CLI) + " " + args + " > " + log.string() + " 2> " + (dir / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, {std::istreambuf_iterator<char>(in), {}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double field(const std::string& out, const std::string& key) {
  std::istringstream s(out);
  std::string k;
  double v = 0;
  while (s >> k)
    if (k == key && s >> v) return v;
  FAIL("missing " << key << " in output: " << out);
  return 0;
}

const json kSynth = {{"n_clips", 2}, {"D", 16}, {"identities_per_clip", 3}, {"frames_per_track_range", {20, 40}},
                     {"utterances_per_identity", 2}, {"clip_duration_s", 15.0}, {"seed", 4}};

fs::path generated(const fs::path& dir) {
  write_json_file(dir / "synth.json", kSynth);
  const Run r = cli("generate --config " + (dir / "synth.json").string() + " --out " + (dir / "corpus").string(), dir);
  REQUIRE(r.code == 0);
  return dir / "corpus" / "manifest.json";
}

}  // namespace

TEST_CASE("generate is deterministic and loadable") {
  const auto dir = fixtures::scratch("cli_generate");
  const auto manifest = generated(dir);
  const Run again = cli("generate --config " + (dir / "synth.json").string() + " --out " + (dir / "again").string(), dir);
  REQUIRE(again.code == 0);
  CHECK(slurp(manifest) == slurp(dir / "again" / "manifest.json"));
  for (const auto& e : fs::recursive_directory_iterator(dir / "corpus"))
    if (e.path().extension() == ".fvem")
      CHECK(slurp(e.path()) == slurp(dir / "again" / fs::relative(e.path(), dir / "corpus")));
  const auto corpus = load_manifest(manifest);
  CHECK(corpus.clips.size() == 2);
  CHECK(corpus.embedding_dim == 16);
  const auto run = read_json_file(dir / "corpus" / "run_manifest.json");
  CHECK(run.at("command") == "generate");
  CHECK(run.at("config_hash").get<std::string>().size() == 16);
}

TEST_CASE("segment recall matches the library") {
  const auto dir = fixtures::scratch("cli_segment");
  const auto manifest = generated(dir);
  const Run r = cli("segment --corpus " + manifest.string() + " --front-end vad+scd --out " + (dir / "seg").string(), dir);
  REQUIRE(r.code == 0);
  const auto corpus = load_manifest(manifest);
  double matched = 0, total = 0;
  for (const auto& clip : corpus.clips) {
    const auto refs = reference_utterances(corpus, clip);
    matched += utterance_recall(segment_clip(corpus, clip, FrontEnd::full, SegConfig{}), refs) / 100.0 * refs.size();
    total += refs.size();
  }
  CHECK(field(r.out, "recall_percent") == doctest::Approx(100.0 * matched / total).epsilon(1e-6));
  CHECK(fs::exists(dir / "seg" / (corpus.clips[0].id + ".json")));
  CHECK(fs::exists(dir / "seg" / "run_manifest.json"));
}

TEST_CASE("train, score and eval chain") {
  const auto dir = fixtures::scratch("cli_chain");
  const auto manifest = generated(dir);
  write_json_file(dir / "train.json", {{"epochs", 2}, {"lr", 1e-3}, {"model", {{"dim", 16}, {"ffn_hidden", 32}, {"max_frames_per_identity", 16}}}});
  const auto c = manifest.string();
  REQUIRE(cli("train --corpus " + c + " --config " + (dir / "train.json").string() + " --out " + (dir / "run").string(), dir).code == 0);
  CHECK(fs::exists(dir / "run" / "checkpoint" / "index.json"));
  const std::string csv = slurp(dir / "run" / "loss.csv");
  CHECK(csv.rfind("# config_hash ", 0) == 0);
  CHECK(csv.find("\n1,") != std::string::npos);

  REQUIRE(cli("score --corpus " + c + " --checkpoint " + (dir / "run" / "checkpoint").string() +
                  " --front-end groundtruth --out " + (dir / "scores.json").string(),
              dir).code == 0);
  CHECK(fs::exists(dir / "scores.json.manifest.json"));
  const Run ev = cli("eval --corpus " + c + " --scores " + (dir / "scores.json").string() + " --out " + (dir / "eval.json").string(), dir);
  REQUIRE(ev.code == 0);
  const double map = field(ev.out, "map_percent");
  CHECK(map > 0.0);
  CHECK(map <= 100.0);
  CHECK(field(ev.out, "recall_percent") == 100.0);

  // Scoring twice gives identical files.
  REQUIRE(cli("score --corpus " + c + " --checkpoint " + (dir / "run" / "checkpoint").string() +
                  " --front-end groundtruth --out " + (dir / "scores2.json").string(),
              dir).code == 0);
  CHECK(slurp(dir / "scores.json") == slurp(dir / "scores2.json"));

  // Scoring hypotheses produced by `segment`.
  REQUIRE(cli("segment --corpus " + c + " --out " + (dir / "seg").string(), dir).code == 0);
  REQUIRE(cli("score --corpus " + c + " --checkpoint " + (dir / "run" / "checkpoint").string() + " --utterances " +
                  (dir / "seg").string() + " --out " + (dir / "scores3.json").string(),
              dir).code == 0);
  CHECK(read_json_file(dir / "scores3.json").at("front_end") == "external");
}

TEST_CASE("eval on oracle detections is perfect") {
  const auto dir = fixtures::scratch("cli_detections");
  const auto manifest = generated(dir);
  json dets = {{"detections", json::array()}};
  for (const auto& d : ground_truth_detections(load_manifest(manifest))) dets["detections"].push_back(to_json(d));
  write_json_file(dir / "dets.json", dets);
  const Run r = cli("eval --corpus " + manifest.string() + " --detections " + (dir / "dets.json").string() + " --out " +
                        (dir / "eval.json").string(),
                    dir);
  REQUIRE(r.code == 0);
  CHECK(field(r.out, "map_percent") == 100.0);
}

TEST_CASE("exit codes") {
  const auto dir = fixtures::scratch("cli_errors");
  const auto manifest = generated(dir);
  const auto c = manifest.string();
  CHECK(cli("", dir).code == 2);
  CHECK(cli("frobnicate --out x", dir).code == 2);
  CHECK(cli("segment --out " + (dir / "s").string(), dir).code == 2);
  CHECK(cli("segment --corpus " + (dir / "nope.json").string() + " --out " + (dir / "s").string(), dir).code == 2);
  CHECK(cli("eval --corpus " + c + " --out " + (dir / "e.json").string(), dir).code == 2);

  write_json_file(dir / "bad.json", {{"epochs", 1}, {"learning_rate", 0.1}});
  CHECK(cli("train --corpus " + c + " --config " + (dir / "bad.json").string() + " --out " + (dir / "t").string(), dir).code == 3);
  write_json_file(dir / "wide.json", {{"epochs", 1}, {"model", {{"dim", 32}}}});
  CHECK(cli("train --corpus " + c + " --config " + (dir / "wide.json").string() + " --out " + (dir / "t").string(), dir).code == 3);

  // Corrupt one embedding file.
  const auto corpus = load_manifest(manifest);
  std::ofstream(manifest.parent_path() / corpus.clips[0].tracks[0].frame_embeddings, std::ios::trunc) << "FVEM";
  CHECK(cli("segment --corpus " + c + " --out " + (dir / "s").string(), dir).code == 3);
}

TEST_CASE("externally written corpora load") {
  // Bytes written field by field, the way an extractor in another language would.
  const auto dir = fixtures::scratch("cli_external");
  auto put = [](std::ofstream& o, std::uint32_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) o.put(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  auto write_fvem = [&](const fs::path& p, std::uint32_t rows, std::uint32_t cols, float base) {
    fs::create_directories(p.parent_path());
    std::ofstream o(p, std::ios::binary);
    o.write("FVEM", 4);
    put(o, 1, 2);
    put(o, 0, 2);
    put(o, rows, 4);
    put(o, cols, 4);
    for (std::uint32_t i = 0; i < rows * cols; ++i) {
      const float v = base + 0.01f * static_cast<float>(i);
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put(o, bits, 4);
    }
  };
  write_fvem(dir / "corpus" / "v" / "a.fvem", 10, 4, 0.5f);
  write_fvem(dir / "corpus" / "v" / "b.fvem", 12, 4, -0.5f);
  write_fvem(dir / "corpus" / "v" / "u0.fvem", 1, 4, 0.25f);
  const json manifest = {
      {"embedding_dim", 4},
      {"clips",
       {{{"id", "v"},
         {"duration_s", 2.0},
         {"fps", 25.0},
         {"sample_rate_hz", 16000},
         {"tracks",
          {{{"track_id", "a"}, {"identity_id", "p"}, {"track_index", 0}, {"start_frame", 0}, {"end_frame", 9}, {"frame_embeddings", "v/a.fvem"}},
           {{"track_id", "b"}, {"identity_id", "q"}, {"track_index", 0}, {"start_frame", 5}, {"end_frame", 16}, {"frame_embeddings", "v/b.fvem"}}}},
         {"utterances", {{{"utt_id", "u0"}, {"speaker_id", "p"}, {"start_s", 0.0}, {"end_s", 0.5}, {"segment_embeddings", "v/u0.fvem"}}}}}}}};
  write_json_file(dir / "corpus" / "manifest.json", manifest);
  const auto corpus = load_manifest(dir / "corpus" / "manifest.json");
  CHECK(validate_corpus(corpus).empty());
  CHECK(corpus.matrix("v/a.fvem")(9, 3) == 0.5f + 0.01f * 39);
  // Library writer and the hand-rolled bytes agree.
  const std::string raw = slurp(dir / "corpus" / "v" / "b.fvem");
  CHECK(encode_embeddings(corpus.matrix("v/b.fvem")) == std::vector<std::uint8_t>(raw.begin(), raw.end()));
  const Run r = cli("segment --corpus " + (dir / "corpus" / "manifest.json").string() + " --front-end groundtruth --out " +
                        (dir / "seg").string(),
                    dir);
  CHECK(r.code == 0);
  CHECK(field(r.out, "recall_percent") == 100.0);

  // A clip with no tracks is still a valid corpus.
  const json empty_clip = {{"id", "e"}, {"duration_s", 1.0}, {"tracks", json::array()}, {"utterances", json::array()}};
  write_json_file(dir / "empty" / "manifest.json", {{"embedding_dim", 4}, {"clips", json::array({empty_clip})}});
  CHECK(validate_corpus(load_manifest(dir / "empty" / "manifest.json")).empty());
}
