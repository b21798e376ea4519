#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "slasd/finetune.hpp"
#include "slasd/synthgen.hpp"

using namespace slasd;
using MatD = Matrix<double>;

namespace {

// n points around each of the given centres.
EmbeddingMatrix blobs(const std::vector<std::vector<float>>& centres, std::size_t n, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, sigma);
  EmbeddingMatrix m(centres.size() * n, centres[0].size());
  for (std::size_t c = 0; c < centres.size(); ++c)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m.cols; ++j) m(c * n + i, j) = centres[c][j] + static_cast<float>(noise(rng));
  return m;
}

// Same partition up to relabelling.
bool same_partition(const std::vector<int>& a, const std::vector<int>& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j)
      if ((a[i] == a[j]) != (b[i] == b[j])) return false;
  return true;
}

MatD cosine_matrix(std::size_t m, std::mt19937_64& rng) {
  auto x = fixtures::random_matrix_d(m, 6, rng);
  for (std::size_t r = 0; r < m; ++r) {
    double n = 0;
    for (double v : x.row(r)) n += v * v;
    for (double& v : x.row(r)) v /= std::sqrt(n);
  }
  MatD s(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t c = 0; c < 6; ++c) s(i, j) += x(i, c) * x(j, c);
  return s;
}

FinetuneData tiny_data() {
  std::mt19937_64 rng(3);
  FinetuneData d;
  d.face = fixtures::random_matrix(12, 8, rng);
  d.voice = fixtures::random_matrix(6, 8, rng);
  for (int i = 0; i < 12; ++i) d.face_group.push_back(i / 4);
  for (int i = 0; i < 6; ++i) d.voice_group.push_back(i / 2);
  d.group_names = {"a", "b", "c"};
  return d;
}

}  // namespace

TEST_CASE("k-means") {
  std::mt19937_64 rng(5);
  SUBCASE("one cluster is the mean") {
    const auto pts = fixtures::random_matrix(10, 3, rng);
    const auto r = kmeans(pts, 1, 1);
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0;
      for (std::size_t i = 0; i < 10; ++i) m += pts(i, c) / 10.0;
      CHECK(r.centroids(0, c) == doctest::Approx(m).epsilon(1e-6));
    }
  }
  SUBCASE("k = N gives zero inertia") {
    const auto r = kmeans(fixtures::random_matrix(7, 4, rng), 7, 2);
    CHECK(r.inertia == 0.0);
    std::vector<int> sorted = r.labels;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
  }
  SUBCASE("separated blobs are recovered") {
    const auto pts = blobs({{5, 0, 0}, {0, 5, 0}, {0, 0, 5}}, 20, 0.3, rng);
    const auto r = kmeans(pts, 3, 9);
    std::vector<int> truth;
    for (int c = 0; c < 3; ++c) truth.insert(truth.end(), 20, c);
    CHECK(same_partition(r.labels, truth));
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-9);
  }
  SUBCASE("rotation does not change the partition") {
    const auto pts = blobs({{4, 0, 1}, {0, 4, -1}, {-3, -3, 0}}, 15, 0.5, rng);
    // Signed coordinate permutation: an exact orthogonal map in floating point.
    EmbeddingMatrix rot(pts.rows, 3);
    for (std::size_t i = 0; i < pts.rows; ++i) {
      rot(i, 0) = -pts(i, 2);
      rot(i, 1) = pts(i, 0);
      rot(i, 2) = -pts(i, 1);
    }
    CHECK(same_partition(kmeans(pts, 3, 4).labels, kmeans(rot, 3, 4).labels));
  }
  SUBCASE("inertia never increases") {
    const auto r = kmeans(fixtures::random_matrix(200, 5, rng), 8, 3);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-6);
  }
  SUBCASE("deterministic for a seed") {
    const auto pts = fixtures::random_matrix(50, 4, rng);
    CHECK(kmeans(pts, 5, 8).labels == kmeans(pts, 5, 8).labels);
  }
  SUBCASE("invalid k") {
    CHECK_THROWS_AS(kmeans(fixtures::random_matrix(3, 2, rng), 4, 1), InvalidArgument);
    CHECK_THROWS_AS(kmeans(fixtures::random_matrix(3, 2, rng), 0, 1), InvalidArgument);
  }
}

TEST_CASE("multi-similarity loss") {
  SUBCASE("no positive pairs gives zero loss") {
    const auto r = multi_similarity_loss(MatD(3, 3, 0.2), {0, 1, 2});
    CHECK(r.loss == 0.0);
    for (double g : r.grad.data) CHECK(g == 0.0);
  }
  SUBCASE("pairs sitting at the threshold") {
    // Anchors 0 and 1 each see one positive and one negative at S = lambda; anchor 2 has no positive.
    MatD s(3, 3, 0.5);
    const auto r = multi_similarity_loss(s, {0, 0, 1});
    CHECK(r.loss == doctest::Approx(2.0 * (1.0 / 2 + 1.0 / 50) * std::log(2.0) / 3.0).epsilon(1e-12));
  }
  SUBCASE("gradient matches finite differences where mining is stable") {
    std::mt19937_64 rng(12);
    const std::vector<int> labels{0, 0, 1, 1, 2, 2, 0, 1};
    int checked = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = cosine_matrix(8, rng);
      const auto r = multi_similarity_loss(s, labels);
      const double h = 1e-6;
      for (std::size_t i = 0; i < s.size(); ++i) {
        auto plus = s, minus = s;
        plus.data[i] += h;
        minus.data[i] -= h;
        if (!(ms_mine(plus, labels, 0.1) == ms_mine(s, labels, 0.1)) || !(ms_mine(minus, labels, 0.1) == ms_mine(s, labels, 0.1)))
          continue;
        const double fd = (multi_similarity_loss(plus, labels).loss - multi_similarity_loss(minus, labels).loss) / (2 * h);
        CHECK(std::abs(fd - r.grad.data[i]) < 1e-6 * std::max(1.0, std::abs(fd)));
        ++checked;
      }
    }
    CHECK(checked > 1000);
  }
  SUBCASE("relabelling and reordering the batch") {
    std::mt19937_64 rng(4);
    const auto s = cosine_matrix(6, rng);
    const std::vector<int> labels{0, 1, 0, 2, 1, 2};
    const double base = multi_similarity_loss(s, labels).loss;
    CHECK(multi_similarity_loss(s, {7, 3, 7, 5, 3, 5}).loss == doctest::Approx(base).epsilon(1e-12));
    const std::size_t p[] = {4, 2, 5, 0, 3, 1};
    MatD sp(6, 6);
    std::vector<int> lp(6);
    for (std::size_t i = 0; i < 6; ++i) {
      lp[i] = labels[p[i]];
      for (std::size_t j = 0; j < 6; ++j) sp(i, j) = s(p[i], p[j]);
    }
    CHECK(multi_similarity_loss(sp, lp).loss == doctest::Approx(base).epsilon(1e-12));
  }
  SUBCASE("shape mismatch") { CHECK_THROWS_AS(multi_similarity_loss(MatD(2, 3), {0, 1}), InvalidArgument); }
}

TEST_CASE("cross-modal recall") {
  FinetuneData d;
  d.group_names = {"a", "b", "c"};
  d.face = EmbeddingMatrix(3, 3);
  d.voice = EmbeddingMatrix(3, 3);
  for (int g = 0; g < 3; ++g) {
    d.face(static_cast<std::size_t>(g), static_cast<std::size_t>(g)) = 1;
    d.voice(static_cast<std::size_t>(g), static_cast<std::size_t>(g)) = 2;
    d.face_group.push_back(g);
    d.voice_group.push_back(g);
  }
  const auto id = init_projections(3, 3, 0, 0.0);
  CHECK(crossmodal_recall_at_1(d, id) == 100.0);
  d.voice_group = {1, 2, 0};
  CHECK(crossmodal_recall_at_1(d, id) == 0.0);

  SUBCASE("random embeddings sit near chance") {
    std::mt19937_64 rng(8);
    FinetuneData r;
    r.group_names = {"a", "b", "c", "d", "e"};
    r.face = fixtures::random_matrix(50, 16, rng);
    r.voice = fixtures::random_matrix(500, 16, rng);
    for (int i = 0; i < 50; ++i) r.face_group.push_back(i % 5);
    for (int i = 0; i < 500; ++i) r.voice_group.push_back(i % 5);
    const double recall = crossmodal_recall_at_1(r, init_projections(16, 16, 0, 0.0));
    CHECK(recall > 10.0);
    CHECK(recall < 30.0);
  }
}

TEST_CASE("finetuning") {
  SUBCASE("zero rounds returns the initial projection") {
    FinetuneConfig cfg;
    cfg.rounds = 0;
    const auto r = finetune(tiny_data(), cfg);
    const auto init = init_projections(8, 8, cfg.seed, cfg.init_noise);
    CHECK(r.params.face_w == init.face_w);
    CHECK(r.params.voice_w == init.voice_w);
    CHECK(r.round_loss.empty());
  }
  SUBCASE("deterministic") {
    FinetuneConfig cfg;
    cfg.k = 3;
    cfg.steps_per_round = 10;
    const auto a = finetune(tiny_data(), cfg), b = finetune(tiny_data(), cfg);
    CHECK(a.params.face_w == b.params.face_w);
    CHECK(a.params.voice_b == b.params.voice_b);
    CHECK(a.round_loss == b.round_loss);
  }
  SUBCASE("degenerate inputs") {
    auto d = tiny_data();
    for (std::size_t r = 0; r < d.face.rows; ++r) std::fill(d.face.row(r).begin(), d.face.row(r).end(), 1.0f);
    CHECK_THROWS_AS(finetune(d, FinetuneConfig{}), InvalidArgument);
    auto e = tiny_data();
    e.voice = EmbeddingMatrix(0, 8);
    e.voice_group.clear();
    CHECK_THROWS_AS(finetune(e, FinetuneConfig{}), InvalidArgument);
  }
  SUBCASE("learning aligns voices with faces on held-out identities") {
    SynthConfig s;
    s.dim = 16;
    s.n_clips = 8;
    s.voice_rotation = 1.0;
    s.offscreen_speaker_fraction = 0;
    s.frames_per_track = {30, 60};
    s.seed = 5;
    auto train_corpus = generate_corpus(s).corpus;
    auto test_corpus = train_corpus;
    test_corpus.clips.erase(test_corpus.clips.begin(), test_corpus.clips.end() - 3);
    train_corpus.clips.resize(5);
    const auto train_data = finetune_data_from_corpus(train_corpus, 64, 1);
    const auto test_data = finetune_data_from_corpus(test_corpus, 64, 1);
    FinetuneConfig cfg;
    cfg.steps_per_round = 100;
    const double before = crossmodal_recall_at_1(test_data, init_projections(16, 16, cfg.seed, cfg.init_noise));
    const auto r = finetune(train_data, cfg);
    CHECK(crossmodal_recall_at_1(test_data, r.params) > before + 20.0);
  }
}

TEST_CASE("corpus extraction") {
  const auto corpus = fixtures::small_corpus();
  const auto d = finetune_data_from_corpus(corpus, 10, 0);
  CHECK(d.group_names == std::vector<std::string>{"c0/alice", "c0/bob"});
  CHECK(d.face.rows == 20);
  CHECK(d.voice.rows == 1);
  CHECK(d.voice_group == std::vector<int>{0});
}

TEST_CASE("projection roundtrip") {
  const auto dir = fixtures::scratch("projections");
  const auto p = init_projections(6, 6, 3, 0.1);
  save_projections(p, dir.string());
  const auto q = load_projections(dir.string());
  CHECK(q.face_w == p.face_w);
  CHECK(q.face_b == p.face_b);
  CHECK(q.voice_w == p.voice_w);
  CHECK(q.voice_b == p.voice_b);
  CHECK_THROWS_AS(load_projections((dir / "nope").string()), ParseError);
}
