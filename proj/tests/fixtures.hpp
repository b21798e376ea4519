#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "slasd/corpus.hpp"

namespace fixtures {

// Fresh per-test scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::path(SLASD_TEST_TMP) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline slasd::EmbeddingMatrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                            double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  slasd::EmbeddingMatrix m(rows, cols);
  for (auto& v : m.data) v = static_cast<float>(n(rng));
  return m;
}

inline slasd::Matrix<double> random_matrix_d(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                             double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  slasd::Matrix<double> m(rows, cols);
  for (auto& v : m.data) v = n(rng);
  return m;
}

// One clip, two tracks of 30 and 45 frames, one utterance; D = 8.
inline slasd::Corpus small_corpus() {
  std::mt19937_64 rng(3);
  slasd::Corpus c;
  c.embedding_dim = 8;
  slasd::Clip clip;
  clip.id = "c0";
  clip.duration_s = 4.0;
  clip.tracks.push_back({"t0", "alice", 0, 0, 29, "c0/t0.fvem", std::nullopt, {}});
  clip.tracks.push_back({"t1", "bob", 0, 40, 84, "c0/t1.fvem", std::nullopt, {}});
  clip.utterances.push_back({"u0", "alice", 0.2, 0.9, "c0/u0.fvem"});
  c.embeddings["c0/t0.fvem"] = random_matrix(30, 8, rng);
  c.embeddings["c0/t1.fvem"] = random_matrix(45, 8, rng);
  c.embeddings["c0/u0.fvem"] = random_matrix(1, 8, rng);
  c.clips.push_back(clip);
  return c;
}

}  // namespace fixtures
