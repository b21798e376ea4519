#include "slasd/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "slasd/adam.hpp"
#include "slasd/autodiff.hpp"
#include "slasd/fvem.hpp"
#include "slasd/kernels.hpp"

namespace slasd {

ClusterAssignment kmeans(const EmbeddingMatrix& points, int k, std::uint64_t seed, int max_iter) {
  const std::size_t n = points.rows, d = points.cols;
  if (k < 1) throw InvalidArgument("kmeans: k must be >= 1");
  if (n < static_cast<std::size_t>(k)) throw InvalidArgument("kmeans: fewer points than clusters");
  const auto K = static_cast<std::size_t>(k);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ClusterAssignment out;
  out.centroids = EmbeddingMatrix(K, d);
  auto set_centroid = [&](std::size_t c, std::size_t point) {
    std::copy_n(points.row(point).begin(), d, out.centroids.row(c).begin());
  };

  // k-means++ seeding.
  std::vector<double> closest(n, std::numeric_limits<double>::infinity());
  std::vector<double> dist(n);
  set_centroid(0, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
  for (std::size_t c = 1; c <= K; ++c) {
    kernels::sq_distances(n, 1, d, points.data.data(), out.centroids.row(c - 1).data(), dist.data());
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += (closest[i] = std::min(closest[i], dist[i]));
    if (c == K) break;
    std::size_t pick = 0;
    if (total > 0) {
      const double r = unit(rng) * total;
      double acc = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (closest[i] == 0) continue;
        pick = i;
        acc += closest[i];
        if (acc > r) break;
      }
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    set_centroid(c, pick);
  }

  out.labels.assign(n, -1);
  std::vector<double> all(n * K);
  for (int iter = 0; iter < std::max(max_iter, 1); ++iter) {
    kernels::sq_distances(n, K, d, points.data.data(), out.centroids.data.data(), all.data());
    bool changed = false;
    double inertia = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = all.data() + i * K;
      const auto best = static_cast<int>(std::min_element(row, row + K) - row);
      changed = changed || best != out.labels[i];
      out.labels[i] = best;
      inertia += row[best];
    }
    out.inertia_history.push_back(inertia);
    out.inertia = inertia;
    out.iterations = iter + 1;
    if (!changed && iter > 0) break;

    // Update step; an empty cluster takes the point farthest from its centroid.
    std::vector<std::size_t> counts(K, 0);
    std::vector<double> acc(K * d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(out.labels[i]);
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) acc[c * d + j] += points(i, j);
    }
    for (std::size_t c = 0; c < K; ++c) {
      if (counts[c] == 0) {
        std::size_t far = 0;
        double far_d = -1;
        for (std::size_t i = 0; i < n; ++i) {
          const auto li = static_cast<std::size_t>(out.labels[i]);
          if (counts[li] <= 1) continue;
          const double di = all[i * K + li];
          if (di > far_d) far_d = di, far = i;
        }
        if (far_d < 0) continue;
        const auto old = static_cast<std::size_t>(out.labels[far]);
        --counts[old];
        for (std::size_t j = 0; j < d; ++j) acc[old * d + j] -= points(far, j);
        out.labels[far] = static_cast<int>(c);
        counts[c] = 1;
        for (std::size_t j = 0; j < d; ++j) acc[c * d + j] = points(far, j);
      }
    }
    for (std::size_t c = 0; c < K; ++c)
      if (counts[c] > 0)
        for (std::size_t j = 0; j < d; ++j)
          out.centroids(c, j) = static_cast<float>(acc[c * d + j] / static_cast<double>(counts[c]));
  }
  return out;
}

template <class T>
MsMining ms_mine(const Matrix<T>& sim, const std::vector<int>& labels, double epsilon) {
  const std::size_t m = sim.rows;
  MsMining mining;
  mining.positives.resize(m);
  mining.negatives.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    T min_pos = std::numeric_limits<T>::infinity(), max_neg = -std::numeric_limits<T>::infinity();
    bool any_pos = false, any_neg = false;
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      if (labels[k] == labels[i]) {
        any_pos = true;
        min_pos = std::min(min_pos, sim(i, k));
      } else {
        any_neg = true;
        max_neg = std::max(max_neg, sim(i, k));
      }
    }
    if (!any_pos || !any_neg) continue;
    std::vector<std::size_t> pos, neg;
    for (std::size_t k = 0; k < m; ++k) {
      if (k == i) continue;
      if (labels[k] == labels[i]) {
        if (sim(i, k) < max_neg + static_cast<T>(epsilon)) pos.push_back(k);
      } else if (sim(i, k) > min_pos - static_cast<T>(epsilon)) {
        neg.push_back(k);
      }
    }
    if (pos.empty() || neg.empty()) continue;
    mining.positives[i] = std::move(pos);
    mining.negatives[i] = std::move(neg);
  }
  return mining;
}

template <class T>
MsLoss<T> multi_similarity_loss(const Matrix<T>& sim, const std::vector<int>& labels, const MsParams& p) {
  const std::size_t m = sim.rows;
  if (sim.cols != m || labels.size() != m) throw InvalidArgument("multi_similarity_loss: shape mismatch");
  MsLoss<T> out;
  out.grad = Matrix<T>(m, m);
  if (m == 0) return out;
  const auto mining = ms_mine(sim, labels, p.epsilon);
  const T alpha = static_cast<T>(p.alpha), beta = static_cast<T>(p.beta), lambda = static_cast<T>(p.lambda);
  const T inv_m = T(1) / static_cast<T>(m);
  T total = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (mining.positives[i].empty()) continue;
    T pos_sum = 0, neg_sum = 0;
    for (auto k : mining.positives[i]) pos_sum += std::exp(-alpha * (sim(i, k) - lambda));
    for (auto k : mining.negatives[i]) neg_sum += std::exp(beta * (sim(i, k) - lambda));
    total += std::log1p(pos_sum) / alpha + std::log1p(neg_sum) / beta;
    for (auto k : mining.positives[i]) out.grad(i, k) = -std::exp(-alpha * (sim(i, k) - lambda)) / (T(1) + pos_sum) * inv_m;
    for (auto k : mining.negatives[i]) out.grad(i, k) = std::exp(beta * (sim(i, k) - lambda)) / (T(1) + neg_sum) * inv_m;
  }
  out.loss = total * inv_m;
  return out;
}

template MsMining ms_mine<float>(const Matrix<float>&, const std::vector<int>&, double);
template MsMining ms_mine<double>(const Matrix<double>&, const std::vector<int>&, double);
template MsLoss<float> multi_similarity_loss<float>(const Matrix<float>&, const std::vector<int>&, const MsParams&);
template MsLoss<double> multi_similarity_loss<double>(const Matrix<double>&, const std::vector<int>&, const MsParams&);

ProjectionParams init_projections(int dim_in, int dim_out, std::uint64_t seed, double noise) {
  if (dim_in <= 0 || dim_out <= 0) throw InvalidArgument("init_projections: dims must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, noise);
  auto make = [&] {
    Matrix<float> w(static_cast<std::size_t>(dim_in), static_cast<std::size_t>(dim_out));
    for (std::size_t r = 0; r < w.rows; ++r)
      for (std::size_t c = 0; c < w.cols; ++c) w(r, c) = static_cast<float>((r == c ? 1.0 : 0.0) + n(rng));
    return w;
  };
  ProjectionParams p;
  p.face_w = make();
  p.face_b = Matrix<float>(1, static_cast<std::size_t>(dim_out));
  p.voice_w = make();
  p.voice_b = Matrix<float>(1, static_cast<std::size_t>(dim_out));
  return p;
}

EmbeddingMatrix project(const EmbeddingMatrix& x, const Matrix<float>& w, const Matrix<float>& b) {
  if (x.cols != w.rows || b.cols != w.cols) throw InvalidArgument("project: shape mismatch");
  EmbeddingMatrix y(x.rows, w.cols);
  for (std::size_t r = 0; r < y.rows; ++r) std::copy(b.data.begin(), b.data.end(), y.row(r).begin());
  kernels::gemm(x.rows, x.cols, w.cols, x.data.data(), w.data.data(), y.data.data());
  return y;
}

FinetuneData finetune_data_from_corpus(const Corpus& corpus, std::size_t max_faces_per_group, std::uint64_t seed) {
  FinetuneData data;
  const auto D = static_cast<std::size_t>(corpus.embedding_dim);
  data.face.cols = data.voice.cols = D;
  std::mt19937_64 rng(seed);
  for (const auto& clip : corpus.clips) {
    std::map<std::string, int> group_of;
    for (const auto& id : clip.visible_identities()) {
      group_of[id] = static_cast<int>(data.group_names.size());
      data.group_names.push_back(clip.id + "/" + id);
      auto frames = identity_frames(corpus, clip, id);
      std::vector<std::size_t> idx(frames.rows);
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(std::min(idx.size(), max_faces_per_group));
      std::sort(idx.begin(), idx.end());
      for (auto i : idx) {
        data.face.data.insert(data.face.data.end(), frames.row(i).begin(), frames.row(i).end());
        ++data.face.rows;
        data.face_group.push_back(group_of[id]);
      }
    }
    for (const auto& u : clip.utterances) {
      const auto g = group_of.find(u.speaker_id);
      if (g == group_of.end()) continue;
      const auto& segs = corpus.matrix(u.segment_embeddings);
      for (std::size_t r = 0; r < segs.rows; ++r) {
        data.voice.data.insert(data.voice.data.end(), segs.row(r).begin(), segs.row(r).end());
        ++data.voice.rows;
        data.voice_group.push_back(g->second);
      }
    }
  }
  return data;
}

namespace {

EmbeddingMatrix normalized(EmbeddingMatrix m) {
  for (std::size_t r = 0; r < m.rows; ++r) normalize_in_place(m.row(r));
  return m;
}

// Pseudo-label per group: majority k-means label of its face rows (ties -> smaller label).
std::vector<int> group_pseudo_labels(const FinetuneData& data, const std::vector<int>& face_labels, int k) {
  const std::size_t G = data.group_names.size();
  std::vector<std::vector<int>> votes(G, std::vector<int>(static_cast<std::size_t>(k), 0));
  for (std::size_t i = 0; i < face_labels.size(); ++i)
    ++votes[static_cast<std::size_t>(data.face_group[i])][static_cast<std::size_t>(face_labels[i])];
  std::vector<int> out(G, -1);
  for (std::size_t g = 0; g < G; ++g) {
    const auto it = std::max_element(votes[g].begin(), votes[g].end());
    if (*it > 0) out[g] = static_cast<int>(it - votes[g].begin());
  }
  return out;
}

}  // namespace

FinetuneResult finetune(const FinetuneData& data, const FinetuneConfig& cfg) {
  if (data.face.rows == 0 || data.voice.rows == 0) throw InvalidArgument("finetune: need face and voice embeddings");
  if (data.face.cols != data.voice.cols) throw InvalidArgument("finetune: face/voice widths differ");
  bool all_same = true;
  for (std::size_t r = 1; r < data.face.rows && all_same; ++r)
    all_same = std::equal(data.face.row(r).begin(), data.face.row(r).end(), data.face.row(0).begin());
  if (all_same) throw InvalidArgument("finetune: degenerate input (all face embeddings identical)");

  const int dim = static_cast<int>(data.face.cols);
  FinetuneResult result;
  result.params = init_projections(dim, dim, cfg.seed, cfg.init_noise);
  std::mt19937_64 rng(cfg.seed ^ 0x66696e65ULL);
  AdamState<float> adam;

  // Rows per group, for batch sampling.
  const std::size_t G = data.group_names.size();
  std::vector<std::vector<std::size_t>> faces_of(G), voices_of(G);
  for (std::size_t i = 0; i < data.face_group.size(); ++i) faces_of[static_cast<std::size_t>(data.face_group[i])].push_back(i);
  for (std::size_t i = 0; i < data.voice_group.size(); ++i)
    voices_of[static_cast<std::size_t>(data.voice_group[i])].push_back(i);

  for (int round = 0; round < cfg.rounds; ++round) {
    // (a) pseudo-labels from the current face projection.
    const auto projected = normalized(project(data.face, result.params.face_w, result.params.face_b));
    const int k = std::min<int>(cfg.k, static_cast<int>(projected.rows));
    const auto clusters = kmeans(projected, k, cfg.seed + static_cast<std::uint64_t>(round), cfg.kmeans_max_iter);
    const auto group_label = group_pseudo_labels(data, clusters.labels, k);

    std::map<int, std::vector<std::size_t>> groups_of_label;
    for (std::size_t g = 0; g < G; ++g)
      if (group_label[g] >= 0 && !voices_of[g].empty()) groups_of_label[group_label[g]].push_back(g);
    result.round_pseudo_classes.push_back(static_cast<int>(groups_of_label.size()));
    std::vector<int> class_ids;
    for (const auto& [label, _] : groups_of_label) class_ids.push_back(label);
    if (class_ids.size() < 2) {
      result.round_loss.push_back(0.0);
      continue;
    }

    // (b) multi-similarity training over joint face/voice batches.
    double round_loss = 0;
    for (int step = 0; step < cfg.steps_per_round; ++step) {
      std::shuffle(class_ids.begin(), class_ids.end(), rng);
      const std::size_t n_classes = std::min<std::size_t>(class_ids.size(), static_cast<std::size_t>(cfg.classes_per_batch));
      Matrix<float> faces(0, data.face.cols), voices(0, data.voice.cols);
      std::vector<int> face_labels, voice_labels;
      for (std::size_t c = 0; c < n_classes; ++c) {
        const auto& groups = groups_of_label[class_ids[c]];
        auto pick_group = [&] { return groups[std::uniform_int_distribution<std::size_t>(0, groups.size() - 1)(rng)]; };
        for (int s = 0; s < cfg.faces_per_class; ++s) {
          const auto& rows = faces_of[pick_group()];
          const auto r = rows[std::uniform_int_distribution<std::size_t>(0, rows.size() - 1)(rng)];
          faces.data.insert(faces.data.end(), data.face.row(r).begin(), data.face.row(r).end());
          ++faces.rows;
          face_labels.push_back(class_ids[c]);
        }
        for (int s = 0; s < cfg.voices_per_class; ++s) {
          const auto& rows = voices_of[pick_group()];
          const auto r = rows[std::uniform_int_distribution<std::size_t>(0, rows.size() - 1)(rng)];
          voices.data.insert(voices.data.end(), data.voice.row(r).begin(), data.voice.row(r).end());
          ++voices.rows;
          voice_labels.push_back(class_ids[c]);
        }
      }
      std::vector<int> labels = face_labels;
      labels.insert(labels.end(), voice_labels.begin(), voice_labels.end());

      ad::Tape<float> tape;
      const auto fw = tape.parameter(result.params.face_w), fb = tape.parameter(result.params.face_b);
      const auto vw = tape.parameter(result.params.voice_w), vb = tape.parameter(result.params.voice_b);
      const auto fe = tape.l2_normalize_rows(tape.add_row(tape.matmul(tape.constant(faces), fw), fb));
      const auto ve = tape.l2_normalize_rows(tape.add_row(tape.matmul(tape.constant(voices), vw), vb));
      const auto joint = tape.concat_rows({fe, ve});
      const auto sim = tape.matmul_nt(joint, joint);
      auto ms = multi_similarity_loss(tape.value(sim), labels, cfg.ms);
      const auto loss = tape.external_scalar(sim, ms.loss, std::move(ms.grad));
      tape.backward(loss);
      round_loss += tape.value(loss).data[0];

      Matrix<float>* params[] = {&result.params.face_w, &result.params.face_b, &result.params.voice_w,
                                 &result.params.voice_b};
      const Matrix<float>* grads[] = {&tape.grad(fw), &tape.grad(fb), &tape.grad(vw), &tape.grad(vb)};
      adam_step<float>(params, grads, adam, cfg.lr);
    }
    result.round_loss.push_back(round_loss / std::max(cfg.steps_per_round, 1));
  }
  return result;
}

double crossmodal_recall_at_1(const FinetuneData& data, const ProjectionParams& params) {
  if (data.voice.rows == 0) return 0.0;
  const std::size_t G = data.group_names.size();
  const auto faces = normalized(project(data.face, params.face_w, params.face_b));
  const auto voices = normalized(project(data.voice, params.voice_w, params.voice_b));
  EmbeddingMatrix centroids(G, faces.cols);
  std::vector<std::size_t> counts(G, 0);
  for (std::size_t i = 0; i < faces.rows; ++i) {
    const auto g = static_cast<std::size_t>(data.face_group[i]);
    ++counts[g];
    for (std::size_t c = 0; c < faces.cols; ++c) centroids(g, c) += faces(i, c);
  }
  std::size_t hits = 0;
  for (std::size_t v = 0; v < voices.rows; ++v) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t g = 0; g < G; ++g) {
      if (counts[g] == 0) continue;
      const double s = cosine(voices.row(v), centroids.row(g));
      if (s > best) best = s, arg = g;
    }
    if (static_cast<int>(arg) == data.voice_group[v]) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(voices.rows);
}

void save_projections(const ProjectionParams& params, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const Matrix<float>*> tensors[] = {
      {"face.w", &params.face_w}, {"face.b", &params.face_b}, {"voice.w", &params.voice_w}, {"voice.b", &params.voice_b}};
  nlohmann::json index = {{"kind", "projection"}, {"tensors", nlohmann::json::object()}};
  for (const auto& [name, m] : tensors) {
    const std::string file = std::string(name) + ".fvem";
    write_embeddings(std::filesystem::path(dir) / file, *m);
    index["tensors"][name] = {{"file", file}, {"rows", m->rows}, {"cols", m->cols}};
  }
  std::ofstream out(std::filesystem::path(dir) / "index.json", std::ios::trunc);
  out << index.dump(2) << '\n';
}

ProjectionParams load_projections(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "index.json");
  if (!in) throw ParseError(dir + "/index.json: cannot open projection index");
  nlohmann::json index;
  in >> index;
  auto load = [&](const char* name) {
    return read_embeddings(std::filesystem::path(dir) / index.at("tensors").at(name).at("file").get<std::string>());
  };
  return {load("face.w"), load("face.b"), load("voice.w"), load("voice.b")};
}

}  // namespace slasd
