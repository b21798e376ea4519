#pragma once

// Projection finetuning over frozen face/voice embeddings: k-means pseudo-labels
// on the face side, propagated to voices through known track/utterance
// identity grouping, then multi-similarity metric learning of both projections.

#include <cstdint>
#include <string>
#include <vector>

#include "slasd/corpus.hpp"
#include "slasd/matrix.hpp"

namespace slasd {

struct ClusterAssignment {
  EmbeddingMatrix centroids;
  std::vector<int> labels;
  double inertia = 0;
  std::vector<double> inertia_history;  // after each assignment step
  int iterations = 0;
};

// k-means++ seeding then Lloyd iterations until the assignment is a fixpoint or max_iter.
ClusterAssignment kmeans(const EmbeddingMatrix& points, int k, std::uint64_t seed, int max_iter = 100);

struct MsParams {
  double alpha = 2.0;
  double beta = 50.0;
  double lambda = 0.5;
  double epsilon = 0.1;
};

// Mined pairs per anchor (row): indices of kept positives and negatives.
struct MsMining {
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::vector<std::size_t>> negatives;
  friend bool operator==(const MsMining&, const MsMining&) = default;
};

template <class T>
MsMining ms_mine(const Matrix<T>& sim, const std::vector<int>& labels, double epsilon);

template <class T>
struct MsLoss {
  T loss = 0;
  Matrix<T> grad;  // dloss / dsim
};

template <class T>
MsLoss<T> multi_similarity_loss(const Matrix<T>& sim, const std::vector<int>& labels, const MsParams& p = {});

struct ProjectionParams {
  Matrix<float> face_w, face_b;    // D_in x D, 1 x D
  Matrix<float> voice_w, voice_b;
};

// Identity plus small seeded noise when D_in == D.
ProjectionParams init_projections(int dim_in, int dim_out, std::uint64_t seed, double noise = 0.01);

EmbeddingMatrix project(const EmbeddingMatrix& x, const Matrix<float>& w, const Matrix<float>& b);

// Rows grouped by identity key; groups index into `group_names`.
struct FinetuneData {
  EmbeddingMatrix face;
  std::vector<int> face_group;
  EmbeddingMatrix voice;
  std::vector<int> voice_group;
  std::vector<std::string> group_names;
};

// Face frames of every track and voice segments of every utterance whose
// speaker is visible; group key = clip id + "/" + identity id.
FinetuneData finetune_data_from_corpus(const Corpus& corpus, std::size_t max_faces_per_group = 64,
                                       std::uint64_t seed = 0);

struct FinetuneConfig {
  int rounds = 3;
  int k = 50;
  int kmeans_max_iter = 50;
  int steps_per_round = 150;
  int classes_per_batch = 8;
  int faces_per_class = 4;
  int voices_per_class = 4;
  double lr = 1e-3;
  double init_noise = 0.01;
  MsParams ms;
  std::uint64_t seed = 11;
};

struct FinetuneResult {
  ProjectionParams params;
  std::vector<double> round_loss;    // mean MS loss per round
  std::vector<int> round_pseudo_classes;  // distinct pseudo-labels over groups
};

FinetuneResult finetune(const FinetuneData& data, const FinetuneConfig& cfg);

// Each voice row queries the identities' mean projected face embeddings by cosine; percentage of top-1 hits.
double crossmodal_recall_at_1(const FinetuneData& data, const ProjectionParams& params);

void save_projections(const ProjectionParams& params, const std::string& dir);
ProjectionParams load_projections(const std::string& dir);

}  // namespace slasd
