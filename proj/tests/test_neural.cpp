#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "subnav/error.hpp"
#include "subnav/neural.hpp"

using namespace subnav;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Four-gate cell written out gate by gate: rows [0,H) input, [H,2H) forget,
// [2H,3H) candidate, [3H,4H) output; columns are [x; h].
std::pair<Vec, Vec> oracle_lstm(const Tensor& w, const Tensor& b, const Vec& x, const Vec& h, const Vec& c) {
  const std::size_t H = c.size();
  auto pre = [&](std::size_t row) {
    double s = b[row];
    for (std::size_t j = 0; j < x.size(); ++j) s += w(row, j) * x[j];
    for (std::size_t j = 0; j < H; ++j) s += w(row, x.size() + j) * h[j];
    return s;
  };
  Vec h_out(H), c_out(H);
  for (std::size_t k = 0; k < H; ++k) {
    const double in = sig(pre(k)), forget = sig(pre(H + k)), cand = std::tanh(pre(2 * H + k)), out = sig(pre(3 * H + k));
    c_out[k] = forget * c[k] + in * cand;
    h_out[k] = out * std::tanh(c_out[k]);
  }
  return {h_out, c_out};
}

Vec softmax_oracle(const Vec& z) {
  Vec p(z.size());
  double s = 0;
  for (std::size_t i = 0; i < z.size(); ++i) s += p[i] = std::exp(z[i]);
  for (auto& v : p) v /= s;
  return p;
}

Vec random_vec(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> d(0, scale);
  Vec v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.embed_dim = 5;
  c.hidden_dim = 4;
  c.feature_dim = 6;
  c.mlp_dim = 3;
  c.shift_state_dim = 3;
  c.remaining_dim = 2;
  c.remaining_capacity = 8;
  return c;
}

}  // namespace

TEST(Init, SeededAndForgetBias) {
  const auto c = small_config();
  const auto a = ModelParams::init(c, 3), b = ModelParams::init(c, 3), d = ModelParams::init(c, 4);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == d);
  const std::size_t H = 4;
  for (std::size_t k = 0; k < 4 * H; ++k) {
    const double expect = (k >= H && k < 2 * H) ? 1.0 : 0.0;
    EXPECT_EQ(a.enc_b[k], expect);
    EXPECT_EQ(a.pol_b[k], expect);
  }
  const double bound = 1.0 / std::sqrt(static_cast<double>(a.c1_w.cols()));
  for (double v : a.c1_w.values()) EXPECT_LE(std::abs(v), bound);
  EXPECT_TRUE(a.all_finite());
}

TEST(Vocab, UnkAndLowercase) {
  Vocab v;
  EXPECT_EQ(v.id("anything"), Vocab::kUnk);
  const int go = v.add("Go");
  EXPECT_EQ(v.id("go"), go);
  EXPECT_EQ(v.encode({"GO", "nowhere"}), (std::vector<int>{go, Vocab::kUnk}));
  EXPECT_EQ(v.add("go"), go);
}

TEST(Encode, SingleTokenIsOneCellStep) {
  const auto p = ModelParams::init(small_config(), 1);
  const std::vector<int> words{7};
  const auto u = encode_instruction(words, p);
  ASSERT_EQ(u.size(), 1u);
  const Vec x(p.embedding.row(7).begin(), p.embedding.row(7).end());
  const auto [h, c] = oracle_lstm(p.enc_w, p.enc_b, x, Vec(4, 0.0), Vec(4, 0.0));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(u[0][k], h[k], 1e-14);
}

TEST(Encode, SequenceMatchesOracle) {
  const auto p = ModelParams::init(small_config(), 2);
  const std::vector<int> words{1, 5, 5, 0, 11};
  const auto u = encode_instruction(words, p);
  Vec h(4, 0.0), c(4, 0.0);
  for (std::size_t t = 0; t < words.size(); ++t) {
    const Vec x(p.embedding.row(words[t]).begin(), p.embedding.row(words[t]).end());
    std::tie(h, c) = oracle_lstm(p.enc_w, p.enc_b, x, h, c);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(u[t][k], h[k], 1e-13);
  }
  EXPECT_EQ(encode_instruction(words, p), u);
}

TEST(Encode, ZeroWeightsGiveZeroStates) {
  // i = f = o = sigma(0) = 1/2 and g = tanh(0) = 0, so c and h stay 0.
  const auto p = ModelParams::zeros(small_config());
  const std::vector<int> words{1, 2, 3};
  for (const auto& h : encode_instruction(words, p)) {
    for (double v : h) EXPECT_EQ(v, 0.0);
  }
}

TEST(Encode, OutOfVocabulary) {
  const auto p = ModelParams::init(small_config(), 1);
  const std::vector<int> bad{12};
  EXPECT_THROW(encode_instruction(bad, p), ValidationError);
  EXPECT_THROW(encode_instruction(std::vector<int>{}, p), Error);
}

TEST(TextAttend, UniformWhenQueryZero) {
  const auto p = ModelParams::zeros(small_config());
  std::mt19937_64 rng(1);
  std::vector<Vec> xs;
  for (int j = 0; j < 4; ++j) xs.push_back(random_vec(rng, 4));
  const auto r = text_attend(random_vec(rng, 4), xs, p);
  for (double w : r.weights) EXPECT_NEAR(w, 0.25, 1e-15);
}

TEST(TextAttend, SingleWord) {
  const auto p = ModelParams::init(small_config(), 1);
  const std::vector<Vec> xs{{0.1, -0.2, 0.3, 0.4}};
  const auto r = text_attend({1, 2, 3, 4}, xs, p);
  ASSERT_EQ(r.weights.size(), 1u);
  EXPECT_DOUBLE_EQ(r.weights[0], 1.0);
  EXPECT_EQ(r.attended, xs[0]);
}

TEST(TextAttend, HandSetLogits) {
  auto p = ModelParams::zeros(small_config());
  for (std::size_t k = 0; k < 4; ++k) p.text_w(k, k) = 1.0;
  const Vec h{1, 0, 0, 0};
  const std::vector<Vec> xs{{std::log(1.0), 2, 0, 0}, {std::log(3.0), -1, 0, 0}};
  const auto r = text_attend(h, xs, p);
  EXPECT_NEAR(r.weights[0], 0.25, 1e-15);
  EXPECT_NEAR(r.weights[1], 0.75, 1e-15);
  EXPECT_NEAR(r.attended[1], 0.25 * 2 + 0.75 * -1, 1e-15);
}

TEST(TextAttend, SimplexAndLocality) {
  const auto p = ModelParams::init(small_config(), 5);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Vec> all;
    for (int j = 0; j < 9; ++j) all.push_back(random_vec(rng, 4, 2.0));
    const Vec h = random_vec(rng, 4, 2.0);
    const std::span<const Vec> span(all.data() + 3, 4);
    const auto r = text_attend(h, span, p);
    double s = 0;
    for (double w : r.weights) {
      EXPECT_GE(w, 0.0);
      s += w;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
    for (int j : {0, 1, 2, 7, 8}) all[j] = random_vec(rng, 4, 5.0);
    const auto again = text_attend(h, std::span<const Vec>(all.data() + 3, 4), p);
    EXPECT_EQ(again.weights, r.weights);
    EXPECT_EQ(again.attended, r.attended);
  }
}

TEST(VisualAttend, SingleDirection) {
  const auto p = ModelParams::init(small_config(), 1);
  const auto r = visual_attend({1, 2, 3, 4}, std::vector<Vec>{Vec(6, 0.5)}, p);
  EXPECT_DOUBLE_EQ(r.weights[0], 1.0);
  EXPECT_EQ(r.attended, Vec(6, 0.5));
}

TEST(VisualAttend, UniformWhenWvZero) {
  auto p = ModelParams::init(small_config(), 1);
  p.vis_w.fill(0.0);
  std::mt19937_64 rng(2);
  std::vector<Vec> views{random_vec(rng, 6), random_vec(rng, 6), random_vec(rng, 6)};
  for (double w : visual_attend(random_vec(rng, 4), views, p).weights) EXPECT_NEAR(w, 1.0 / 3.0, 1e-15);
}

TEST(VisualAttend, MatchesOracle) {
  const auto p = ModelParams::init(small_config(), 8);
  std::mt19937_64 rng(3);
  std::vector<Vec> views{random_vec(rng, 6), random_vec(rng, 6), random_vec(rng, 6)};
  const Vec h = random_vec(rng, 4);
  Vec z(3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t g = 0; g < 3; ++g) {
      double key = p.mlp_b[g], q = 0;
      for (std::size_t f = 0; f < 6; ++f) key += p.mlp_w(g, f) * views[i][f];
      for (std::size_t k = 0; k < 4; ++k) q += p.vis_w(g, k) * h[k];
      z[i] += q * std::tanh(key);
    }
  }
  const auto expect = softmax_oracle(z);
  const auto r = visual_attend(h, views, p);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(r.weights[i], expect[i], 1e-14);
  EXPECT_EQ(project_feature(views[0], p).size(), 3u);
}

TEST(PolicyStep, ZeroEverything) {
  const auto p = ModelParams::zeros(small_config());
  const auto s = policy_step(Vec(6, 0.0), Vec(6, 0.0), Vec(4, 0.0), Vec(4, 0.0), p);
  for (double v : s.h) EXPECT_EQ(v, 0.0);
  for (double v : s.m) EXPECT_EQ(v, 0.0);
}

TEST(PolicyStep, ScalarOracleTwoDimensional) {
  ModelConfig c = small_config();
  c.hidden_dim = 2;
  c.feature_dim = 2;
  const auto p = ModelParams::init(c, 9);
  const Vec v{0.3, -0.7}, a{0.1, 0.9}, text{0.5, -0.25}, m{0.2, -0.4};
  const auto s = policy_step(v, a, text, m, p);
  const auto [h, cell] = oracle_lstm(p.pol_w, p.pol_b, Vec{v[0], v[1], a[0], a[1]}, text, m);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(s.h[k], h[k], 1e-12);
    EXPECT_NEAR(s.m[k], cell[k], 1e-12);
  }
  const auto again = policy_step(v, a, text, m, p);
  EXPECT_EQ(again.h, s.h);
}

TEST(PolicyStep, ShapeMismatch) {
  const auto p = ModelParams::init(small_config(), 1);
  EXPECT_THROW(policy_step(Vec(5, 0.0), Vec(6, 0.0), Vec(4, 0.0), Vec(4, 0.0), p), Error);
}

TEST(ActionProbs, UniformWhenWaZero) {
  auto p = ModelParams::init(small_config(), 1);
  p.act_w.fill(0.0);
  std::mt19937_64 rng(4);
  std::vector<Vec> views{random_vec(rng, 6), random_vec(rng, 6), random_vec(rng, 6), random_vec(rng, 6)};
  for (double q : action_probabilities(random_vec(rng, 4), random_vec(rng, 4), views, p)) EXPECT_NEAR(q, 0.25, 1e-15);
}

TEST(ActionProbs, HandSetLogits) {
  auto p = ModelParams::zeros(small_config());
  p.mlp_w(0, 0) = 1.0;
  p.mlp_w(1, 1) = 1.0;
  p.act_w(0, 0) = 4.0;
  Vec forward(6, 0.0), stop(6, 0.0);
  forward[0] = std::atanh(0.5);
  stop[1] = std::atanh(0.5);
  const auto probs = action_probabilities({1, 0, 0, 0}, Vec(4, 0.0), std::vector<Vec>{forward, stop}, p);
  EXPECT_NEAR(probs[0], 0.8808, 5e-5);
  EXPECT_NEAR(probs[1], 0.1192, 5e-5);
  EXPECT_NEAR(probs[0], sig(2.0), 1e-14);
}

TEST(ActionProbs, Simplex) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = ModelParams::init(small_config(), static_cast<std::uint64_t>(trial));
    std::vector<Vec> views;
    const int n = std::uniform_int_distribution<int>(1, 6)(rng);
    for (int i = 0; i < n; ++i) views.push_back(random_vec(rng, 6, 3.0));
    const auto probs = action_probabilities(random_vec(rng, 4, 3.0), random_vec(rng, 4, 3.0), views, p);
    double s = 0;
    for (double q : probs) {
      EXPECT_GE(q, 0.0);
      s += q;
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Shift, ZeroMemoryAnnihilates) {
  const auto p = ModelParams::init(small_config(), 3);
  std::mt19937_64 rng(7);
  const AgentState st{random_vec(rng, 4), Vec(4, 0.0)};
  const auto out = shift_probability(st, random_vec(rng, 6), random_vec(rng, 4), 2, p);
  for (double v : out.gated_state) EXPECT_EQ(v, 0.0);
  double pre = p.c2_b[0];
  for (std::size_t r = 0; r < 2; ++r) pre += p.c2_w(0, r) * (p.c3_w(r, 2) + p.c3_b[r]);
  EXPECT_NEAR(out.probability, sig(pre), 1e-15);
}

TEST(Shift, ZeroWeightsGiveHalf) {
  const auto p = ModelParams::zeros(small_config());
  std::mt19937_64 rng(8);
  const AgentState st{random_vec(rng, 4), random_vec(rng, 4)};
  EXPECT_EQ(shift_probability(st, random_vec(rng, 6), random_vec(rng, 4), 1, p).probability, 0.5);
}

TEST(Shift, RemainingPriorIsLive) {
  const auto p = ModelParams::init(small_config(), 4);
  std::mt19937_64 rng(9);
  const AgentState st{random_vec(rng, 4), random_vec(rng, 4)};
  const Vec v = random_vec(rng, 6), x = random_vec(rng, 4);
  EXPECT_NE(shift_probability(st, v, x, 0, p).probability, shift_probability(st, v, x, 3, p).probability);
  const auto at_cap = shift_probability(st, v, x, 7, p);
  const auto beyond = shift_probability(st, v, x, 20, p);
  EXPECT_FALSE(at_cap.clamped);
  EXPECT_TRUE(beyond.clamped);
  EXPECT_EQ(at_cap.probability, beyond.probability);
  EXPECT_THROW(shift_probability(st, v, x, -1, p), Error);
}

TEST(Shift, MonotoneInFinalBias) {
  auto p = ModelParams::init(small_config(), 5);
  std::mt19937_64 rng(10);
  const AgentState st{random_vec(rng, 4), random_vec(rng, 4)};
  const Vec v = random_vec(rng, 6), x = random_vec(rng, 4);
  double prev = 0;
  for (double b = -5; b <= 5; b += 0.5) {
    p.c2_b[0] = b;
    const double ps = shift_probability(st, v, x, 1, p).probability;
    EXPECT_GT(ps, prev);
    prev = ps;
  }
}

TEST(JointLoss, PerfectPredictions) {
  const std::vector<Vec> probs{{1.0, 0.0}, {0.0, 1.0}};
  const std::vector<int> targets{0, 1};
  const std::vector<double> ps{1.0, 0.0};
  const std::vector<int> st{1, 0};
  const auto r = joint_loss(probs, targets, ps, st, 1);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(JointLoss, SingleShiftStep) {
  const auto r = joint_loss({}, {}, std::vector<double>{0.5}, std::vector<int>{1}, 1);
  EXPECT_NEAR(r.shift_term, std::log(2.0), 1e-15);
  EXPECT_NEAR(r.shift_term, 0.6931, 5e-5);
  EXPECT_TRUE(r.shift_class_missing);
}

TEST(JointLoss, NoPositivesContributesZero) {
  const auto r = joint_loss({}, {}, std::vector<double>{0.3, 0.9}, std::vector<int>{0, 0}, 1);
  EXPECT_EQ(r.shift_term, 0.0);
  EXPECT_TRUE(r.shift_class_missing);
  EXPECT_TRUE(r.shift_samples.empty());
}

TEST(JointLoss, BalancedTwoPlusTwo) {
  const std::vector<int> targets{0, 1, 0, 0, 1, 0, 0, 0};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto s = balanced_shift_sample(targets, seed);
    ASSERT_EQ(s.size(), 4u);
    int pos = 0, neg = 0;
    for (int t : s) (targets[t] == 1 ? pos : neg)++;
    EXPECT_EQ(pos, 2);
    EXPECT_EQ(neg, 2);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_TRUE(std::adjacent_find(s.begin(), s.end()) == s.end());
    EXPECT_EQ(balanced_shift_sample(targets, seed), s);
  }
  const std::vector<double> ps(8, 0.3);
  const auto r = joint_loss({}, {}, ps, targets, 3);
  EXPECT_EQ(r.shift_samples.size(), 4u);
  EXPECT_NEAR(r.shift_term, -2 * std::log(0.3) - 2 * std::log(0.7), 1e-12);
  EXPECT_FALSE(r.shift_class_missing);
}

TEST(JointLoss, NegativesDrawnVary) {
  const std::vector<int> targets{1, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  std::set<std::vector<int>> seen;
  for (std::uint64_t seed = 0; seed < 30; ++seed) seen.insert(balanced_shift_sample(targets, seed));
  EXPECT_GT(seen.size(), 3u);
}

TEST(JointLoss, FloorAndErrors) {
  const auto r = joint_loss(std::vector<Vec>{{1.0, 0.0}}, std::vector<int>{1}, {}, {}, 0);
  EXPECT_NEAR(r.loss, -std::log(kProbFloor), 1e-9);
  EXPECT_THROW(joint_loss(std::vector<Vec>{{1.0}}, std::vector<int>{}, {}, {}, 0), ValidationError);
  EXPECT_THROW(joint_loss(std::vector<Vec>{{1.0}}, std::vector<int>{3}, {}, {}, 0), ValidationError);
}

TEST(GradCheck, SoftmaxCrossEntropyToy) {
  const Vec z{0.3, -1.2, 2.1};
  const int y = 1;
  auto loss = [&](const Vec& logits) {
    const auto p = la::softmax(logits);
    const std::vector<Vec> probs{p};
    return joint_loss(probs, std::vector<int>{y}, {}, {}, 0).loss;
  };
  const auto p = la::softmax(z);
  const std::vector<Vec> probs{p};
  const auto jl = joint_loss(probs, std::vector<int>{y}, {}, {}, 0);
  const Vec analytic = la::softmax_backward(p, jl.d_action_probs[0]);
  const double eps = 1e-5;
  for (std::size_t i = 0; i < 3; ++i) {
    const double closed = p[i] - (static_cast<int>(i) == y ? 1.0 : 0.0);
    EXPECT_NEAR(analytic[i], closed, 1e-14);
    Vec up = z, down = z;
    up[i] += eps;
    down[i] -= eps;
    const double numeric = (loss(up) - loss(down)) / (2 * eps);
    const double rel = std::abs(closed - numeric) / std::max({std::abs(closed), std::abs(numeric), 1e-8});
    EXPECT_LT(rel, 1e-9);
  }
}

TEST(GradCheck, FullPipelineBelowTolerance) {
  ModelConfig c;
  c.hidden_dim = 8;
  for (std::uint64_t seed : {1u, 7u, 12u}) {
    const auto params = ModelParams::init(c, seed);
    const auto bundle = make_gradcheck_bundle(c, seed, 3, 2);
    const auto report = grad_check(params, bundle);
    EXPECT_EQ(report.max_relative_error.size(), 19u);
    EXPECT_LT(report.worst, 1e-4) << "seed " << seed;
  }
}

TEST(GradCheck, ReferenceLossAgrees) {
  ModelConfig c;
  c.hidden_dim = 8;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto params = ModelParams::init(c, seed);
    const auto bundle = make_gradcheck_bundle(c, seed, 4, 3);
    const double a = bundle_loss(params, bundle), b = reference_loss(params, bundle);
    EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, std::abs(a)));
  }
}

TEST(GradCheck, DeadParametersHaveZeroGradient) {
  ModelConfig c;
  c.hidden_dim = 8;
  const auto params = ModelParams::init(c, 2);
  const auto bundle = make_gradcheck_bundle(c, 2, 3, 2);
  ModelParams grads = params.zeros_like();
  bundle_loss(params, bundle, &grads);
  // The remaining-count slot E-1 is never selected with two sub-instructions.
  const std::size_t last = static_cast<std::size_t>(c.remaining_capacity) - 1;
  const double eps = 1e-5;
  for (std::size_t r = 0; r < params.c3_w.rows(); ++r) {
    EXPECT_EQ(grads.c3_w(r, last), 0.0);
    ModelParams up = params, down = params;
    up.c3_w(r, last) += eps;
    down.c3_w(r, last) -= eps;
    EXPECT_NEAR((reference_loss(up, bundle) - reference_loss(down, bundle)) / (2 * eps), 0.0, 1e-12);
  }
  // Vocabulary rows absent from the instruction.
  for (int w = 0; w < c.vocab_size; ++w) {
    if (std::find(bundle.words.begin(), bundle.words.end(), w) != bundle.words.end()) continue;
    for (double g : grads.embedding.row(static_cast<std::size_t>(w))) EXPECT_EQ(g, 0.0);
  }
}

TEST(GradCheck, TapeBackwardMatchesBundle) {
  ModelConfig c;
  c.hidden_dim = 6;
  const auto params = ModelParams::init(c, 4);
  const auto bundle = make_gradcheck_bundle(c, 4, 5, 3);
  ModelParams g1 = params.zeros_like(), g2 = params.zeros_like();
  const double l1 = bundle_loss(params, bundle, &g1);
  EpisodeTape tape(params);
  tape.encode(bundle.words);
  const int L = static_cast<int>(bundle.sub_spans.size());
  for (const auto& st : bundle.steps) {
    const auto [b, e] = bundle.sub_spans[static_cast<std::size_t>(st.sub_idx)];
    tape.step(b, e, st.views);
    tape.shift(st.action_target, L - 1 - st.sub_idx);
    tape.set_targets(st.action_target, st.shift_target);
  }
  const auto jl = tape.backward(bundle.balance_seed, g2);
  EXPECT_NEAR(jl.loss, l1, 1e-12);
  EXPECT_NEAR(tape.loss(bundle.balance_seed).loss, l1, 1e-12);
  for (const auto& [name, t] : g1.named()) {
    const Tensor* other = nullptr;
    for (const auto& [n2, t2] : std::as_const(g2).named()) {
      if (n2 == name) other = t2;
    }
    ASSERT_NE(other, nullptr);
    for (std::size_t i = 0; i < t->size(); ++i) EXPECT_NEAR((*t)[i], (*other)[i], 1e-12) << name;
  }
}

TEST(Checkpoint, RoundTrip) {
  const auto params = ModelParams::init(small_config(), 11);
  Vocab vocab;
  for (const char* w : {"go", "left", "stop"}) vocab.add(w);
  const auto path = (std::filesystem::temp_directory_path() / "subnav_ckpt.json").string();
  save_checkpoint(path, params, vocab, {{"note", "x"}});
  const auto [p2, v2] = load_checkpoint(path);
  EXPECT_TRUE(p2 == params);
  EXPECT_EQ(v2.words(), vocab.words());
  {
    std::ofstream out(path);
    out << R"({"format":"other"})";
  }
  EXPECT_THROW(load_checkpoint(path), ValidationError);
  std::filesystem::remove(path);
}
