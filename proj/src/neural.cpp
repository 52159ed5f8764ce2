#include "subnav/neural.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>

#include "subnav/error.hpp"

namespace subnav {

namespace {

using detail::AttentionCache;
using detail::LstmCache;
using detail::ShiftCache;

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

void require(bool ok, const char* what) {
  if (!ok) throw Error(what);
}

std::span<const double> head(const Vec& v, std::size_t n) { return {v.data(), n}; }
std::span<const double> tail(const Vec& v, std::size_t from) { return {v.data() + from, v.size() - from}; }

std::pair<Vec, Vec> lstm_forward(const Tensor& w, const Tensor& b, std::span<const double> x,
                                 std::span<const double> h_prev, std::span<const double> c_prev, LstmCache* cache) {
  const std::size_t hidden = c_prev.size();
  require(h_prev.size() == hidden && w.rows() == 4 * hidden && w.cols() == x.size() + hidden,
          "lstm: shape mismatch");
  Vec input = la::concat({x, h_prev});
  const Vec a = la::affine(w, b, input);
  Vec i(hidden), f(hidden), g(hidden), o(hidden), c(hidden), tc(hidden), h(hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    i[k] = la::sigmoid(a[k]);
    f[k] = la::sigmoid(a[hidden + k]);
    g[k] = std::tanh(a[2 * hidden + k]);
    o[k] = la::sigmoid(a[3 * hidden + k]);
    c[k] = f[k] * c_prev[k] + i[k] * g[k];
    tc[k] = std::tanh(c[k]);
    h[k] = o[k] * tc[k];
  }
  if (cache) {
    cache->input = std::move(input);
    cache->c_prev.assign(c_prev.begin(), c_prev.end());
    cache->i = std::move(i);
    cache->f = std::move(f);
    cache->g = std::move(g);
    cache->o = std::move(o);
    cache->tanh_c = std::move(tc);
  }
  return {std::move(h), std::move(c)};
}

// Returns d(input) where input = [x; h_prev]; writes d(c_prev).
Vec lstm_backward(const Tensor& w, const LstmCache& cc, std::span<const double> dh, std::span<const double> dc,
                  Tensor& dw, Tensor& db, Vec& dc_prev) {
  const std::size_t hidden = cc.c_prev.size();
  Vec da(4 * hidden);
  dc_prev.assign(hidden, 0.0);
  for (std::size_t k = 0; k < hidden; ++k) {
    const double tc = cc.tanh_c[k];
    const double dct = dc[k] + dh[k] * cc.o[k] * (1.0 - tc * tc);
    const double d_o = dh[k] * tc;
    const double d_i = dct * cc.g[k];
    const double d_g = dct * cc.i[k];
    const double d_f = dct * cc.c_prev[k];
    dc_prev[k] = dct * cc.f[k];
    da[k] = d_i * cc.i[k] * (1.0 - cc.i[k]);
    da[hidden + k] = d_f * cc.f[k] * (1.0 - cc.f[k]);
    da[2 * hidden + k] = d_g * (1.0 - cc.g[k] * cc.g[k]);
    da[3 * hidden + k] = d_o * cc.o[k] * (1.0 - cc.o[k]);
  }
  la::outer_acc(dw, da, cc.input);
  la::add_to(db, da);
  Vec dinput(cc.input.size(), 0.0);
  la::matTvec_acc(w, da, dinput);
  return dinput;
}

// weights = softmax(keys . (W h_prev)); attended = sum_j weights_j values_j
AttentionResult attend(const Tensor& w, const Vec& h_prev, std::span<const Vec> keys, std::span<const Vec> values,
                       AttentionCache* cache) {
  require(!keys.empty() && keys.size() == values.size(), "attention: empty or mismatched inputs");
  require(w.cols() == h_prev.size(), "attention: state dimension mismatch");
  Vec query = la::matvec(w, h_prev);
  Vec z(keys.size());
  for (std::size_t j = 0; j < keys.size(); ++j) {
    require(keys[j].size() == query.size(), "attention: key dimension mismatch");
    z[j] = la::dot(query, keys[j]);
  }
  AttentionResult r;
  r.weights = la::softmax(z);
  r.attended.assign(values[0].size(), 0.0);
  for (std::size_t j = 0; j < values.size(); ++j) la::axpy(r.weights[j], values[j], r.attended);
  if (cache) {
    cache->h_prev = h_prev;
    cache->query = std::move(query);
    cache->weights = r.weights;
  }
  return r;
}

void attend_backward(const Tensor& w, const AttentionCache& c, std::span<const Vec> keys, std::span<const Vec> values,
                     const Vec& d_attended, Tensor& dw, Vec& dh_prev, std::vector<Vec>& dkeys,
                     std::vector<Vec>& dvalues) {
  const std::size_t n = keys.size();
  Vec dweights(n);
  for (std::size_t j = 0; j < n; ++j) {
    dweights[j] = la::dot(d_attended, values[j]);
    la::axpy(c.weights[j], d_attended, dvalues[j]);
  }
  const Vec dz = la::softmax_backward(c.weights, dweights);
  Vec dquery(c.query.size(), 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    la::axpy(dz[j], keys[j], dquery);
    la::axpy(dz[j], c.query, dkeys[j]);
  }
  la::outer_acc(dw, dquery, c.h_prev);
  la::matTvec_acc(w, dquery, dh_prev);
}

Vec project(const ModelParams& p, const Vec& v) {
  require(v.size() == p.mlp_w.cols(), "feature projection: dimension mismatch");
  Vec k = la::affine(p.mlp_w, p.mlp_b, v);
  for (auto& x : k) x = std::tanh(x);
  return k;
}

Vec action_forward(const ModelParams& p, const Vec& h, const Vec& text, std::span<const Vec> keys, Vec* joint_out,
                   Vec* query_out) {
  require(!keys.empty(), "action scoring: no directions");
  Vec joint = la::concat({h, text});
  require(joint.size() == p.act_w.cols(), "action scoring: state dimension mismatch");
  Vec query = la::matvec(p.act_w, joint);
  Vec logits(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) logits[i] = la::dot(query, keys[i]);
  if (joint_out) *joint_out = std::move(joint);
  if (query_out) *query_out = std::move(query);
  return la::softmax(logits);
}

ShiftCache shift_forward(const ModelParams& p, const Vec& h, const Vec& m, const Vec& view, const Vec& text,
                         int remaining, bool& clamped) {
  require(remaining >= 0, "shift: negative remaining count");
  const int capacity = p.config.remaining_capacity;
  clamped = remaining > capacity - 1;
  const int slot = std::min(remaining, capacity - 1);
  require(h.size() == p.c0_w.cols() && m.size() == p.c1_w.rows(), "shift: state dimension mismatch");

  ShiftCache c;
  c.h = h;
  c.m = m;
  c.a0 = la::affine(p.c0_w, p.c0_b, h);
  c.cat1 = la::concat({c.a0, view, text});
  require(c.cat1.size() == p.c1_w.cols(), "shift: input dimension mismatch");
  c.gate = la::affine(p.c1_w, p.c1_b, c.cat1);
  for (auto& g : c.gate) g = la::sigmoid(g);
  c.tanh_m.resize(m.size());
  Vec hc(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) {
    c.tanh_m[k] = std::tanh(m[k]);
    hc[k] = c.gate[k] * c.tanh_m[k];
  }
  c.e.assign(sz(capacity), 0.0);
  c.e[sz(slot)] = 1.0;
  const Vec a3 = la::affine(p.c3_w, p.c3_b, c.e);
  c.cat2 = la::concat({a3, hc});
  const double s = la::dot(p.c2_w.row(0), c.cat2) + p.c2_b[0];
  c.probability = la::sigmoid(s);
  return c;
}

// Accumulates into dh, dm, dview, dtext.
void shift_backward(const ModelParams& p, const ShiftCache& c, double dprob, ModelParams& g, Vec& dh, Vec& dm,
                    Vec& dview, Vec& dtext) {
  const double ds = dprob * c.probability * (1.0 - c.probability);
  la::axpy(ds, c.cat2, g.c2_w.row(0));
  g.c2_b[0] += ds;
  Vec dcat2(c.cat2.size(), 0.0);
  la::axpy(ds, p.c2_w.row(0), dcat2);
  const std::size_t c3 = p.c3_w.rows();
  la::outer_acc(g.c3_w, head(dcat2, c3), c.e);
  la::add_to(g.c3_b, head(dcat2, c3));
  const auto dhc = tail(dcat2, c3);

  const std::size_t hidden = c.m.size();
  Vec dpre(hidden);
  for (std::size_t k = 0; k < hidden; ++k) {
    const double dgate = dhc[k] * c.tanh_m[k];
    dm[k] += dhc[k] * c.gate[k] * (1.0 - c.tanh_m[k] * c.tanh_m[k]);
    dpre[k] = dgate * c.gate[k] * (1.0 - c.gate[k]);
  }
  la::outer_acc(g.c1_w, dpre, c.cat1);
  la::add_to(g.c1_b, dpre);
  Vec dcat1(c.cat1.size(), 0.0);
  la::matTvec_acc(p.c1_w, dpre, dcat1);
  const std::size_t c0 = c.a0.size();
  const std::size_t feat = dview.size();
  const auto da0 = head(dcat1, c0);
  la::outer_acc(g.c0_w, da0, c.h);
  la::add_to(g.c0_b, da0);
  la::matTvec_acc(p.c0_w, da0, dh);
  la::axpy(1.0, std::span<const double>(dcat1.data() + c0, feat), dview);
  la::axpy(1.0, std::span<const double>(dcat1.data() + c0 + feat, dtext.size()), dtext);
}

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.values()) v = dist(rng);
}

}  // namespace

// ---- configuration and parameters ------------------------------------------------

void ModelConfig::validate() const {
  if (vocab_size < 1 || embed_dim < 1 || hidden_dim < 1 || feature_dim < 1 || mlp_dim < 1 || shift_state_dim < 1 ||
      remaining_dim < 1 || remaining_capacity < 1) {
    throw ValidationError("model config: every dimension must be positive");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},         {"embed_dim", embed_dim},
          {"hidden_dim", hidden_dim},         {"feature_dim", feature_dim},
          {"mlp_dim", mlp_dim},               {"shift_state_dim", shift_state_dim},
          {"remaining_dim", remaining_dim},   {"remaining_capacity", remaining_capacity}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden_dim = j.at("hidden_dim").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.mlp_dim = j.at("mlp_dim").get<int>();
  c.shift_state_dim = j.at("shift_state_dim").get<int>();
  c.remaining_dim = j.at("remaining_dim").get<int>();
  c.remaining_capacity = j.at("remaining_capacity").get<int>();
  c.validate();
  return c;
}

ModelParams ModelParams::zeros(const ModelConfig& c) {
  c.validate();
  const std::size_t V = sz(c.vocab_size), D = sz(c.embed_dim), H = sz(c.hidden_dim), F = sz(c.feature_dim),
                    G = sz(c.mlp_dim), C0 = sz(c.shift_state_dim), C3 = sz(c.remaining_dim),
                    E = sz(c.remaining_capacity);
  ModelParams p;
  p.config = c;
  p.embedding = Tensor({V, D});
  p.enc_w = Tensor({4 * H, D + H});
  p.enc_b = Tensor({4 * H});
  p.pol_w = Tensor({4 * H, 2 * F + H});
  p.pol_b = Tensor({4 * H});
  p.text_w = Tensor({H, H});
  p.vis_w = Tensor({G, H});
  p.mlp_w = Tensor({G, F});
  p.mlp_b = Tensor({G});
  p.act_w = Tensor({G, 2 * H});
  p.stop_feature = Tensor({F});
  p.c0_w = Tensor({C0, H});
  p.c0_b = Tensor({C0});
  p.c1_w = Tensor({H, C0 + F + H});
  p.c1_b = Tensor({H});
  p.c2_w = Tensor({1, C3 + H});
  p.c2_b = Tensor({1});
  p.c3_w = Tensor({C3, E});
  p.c3_b = Tensor({C3});
  return p;
}

ModelParams ModelParams::init(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = zeros(c);
  std::mt19937_64 rng(seed);
  const std::size_t H = sz(c.hidden_dim);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (auto& v : p.embedding.values()) v = unit(rng);
  for (auto [name, t] : p.named()) {
    if (t->shape().size() != 2 || t == &p.embedding) continue;
    const bool recurrent = t == &p.enc_w || t == &p.pol_w;
    fill_uniform(*t, 1.0 / std::sqrt(static_cast<double>(recurrent ? H : t->cols())), rng);
  }
  fill_uniform(p.stop_feature, 1.0 / std::sqrt(static_cast<double>(c.feature_dim)), rng);
  for (std::size_t k = H; k < 2 * H; ++k) {
    p.enc_b[k] = 1.0;
    p.pol_b[k] = 1.0;
  }
  return p;
}

std::vector<std::pair<std::string_view, Tensor*>> ModelParams::named() {
  return {{"embedding", &embedding}, {"enc_w", &enc_w},   {"enc_b", &enc_b},   {"pol_w", &pol_w},
          {"pol_b", &pol_b},         {"text_w", &text_w}, {"vis_w", &vis_w},   {"mlp_w", &mlp_w},
          {"mlp_b", &mlp_b},         {"act_w", &act_w},   {"stop_feature", &stop_feature},
          {"c0_w", &c0_w},           {"c0_b", &c0_b},     {"c1_w", &c1_w},     {"c1_b", &c1_b},
          {"c2_w", &c2_w},           {"c2_b", &c2_b},     {"c3_w", &c3_w},     {"c3_b", &c3_b}};
}

std::vector<std::pair<std::string_view, const Tensor*>> ModelParams::named() const {
  std::vector<std::pair<std::string_view, const Tensor*>> out;
  for (auto [name, t] : const_cast<ModelParams*>(this)->named()) out.emplace_back(name, t);
  return out;
}

ModelParams& ModelParams::operator+=(const ModelParams& other) {
  auto mine = named();
  auto theirs = other.named();
  for (std::size_t i = 0; i < mine.size(); ++i) {
    auto& a = mine[i].second->values();
    const auto& b = theirs[i].second->values();
    require(a.size() == b.size(), "parameter merge: shape mismatch");
    for (std::size_t k = 0; k < a.size(); ++k) a[k] += b[k];
  }
  return *this;
}

void ModelParams::scale(double factor) {
  for (auto [name, t] : named()) {
    for (auto& v : t->values()) v *= factor;
  }
}

double ModelParams::squared_norm() const {
  double s = 0.0;
  for (auto [name, t] : named()) {
    for (double v : t->values()) s += v * v;
  }
  return s;
}

bool ModelParams::all_finite() const {
  for (auto [name, t] : named()) {
    if (!t->all_finite()) return false;
  }
  return true;
}

nlohmann::json ModelParams::to_json() const {
  nlohmann::json arrays = nlohmann::json::object();
  for (auto [name, t] : named()) arrays[std::string(name)] = {{"shape", t->shape()}, {"values", t->values()}};
  return {{"config", config.to_json()}, {"arrays", arrays}};
}

ModelParams ModelParams::from_json(const nlohmann::json& j) {
  ModelParams p = zeros(ModelConfig::from_json(j.at("config")));
  const auto& arrays = j.at("arrays");
  for (auto [name, t] : p.named()) {
    const auto& a = arrays.at(std::string(name));
    if (a.at("shape").get<std::vector<std::size_t>>() != t->shape()) {
      throw ValidationError("checkpoint array '" + std::string(name) + "' has the wrong shape");
    }
    auto values = a.at("values").get<std::vector<double>>();
    if (values.size() != t->size()) throw ValidationError("checkpoint array '" + std::string(name) + "' is truncated");
    t->values() = std::move(values);
  }
  return p;
}

Vocab::Vocab() { add("<unk>"); }

Vocab::Vocab(const std::vector<std::string>& words) {
  for (const auto& w : words) add(w);
  if (words_.empty() || words_[0] != "<unk>") throw ValidationError("vocabulary must start with <unk>");
}

namespace {

std::string lowercase(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

int Vocab::add(const std::string& word) {
  auto [it, inserted] = ids_.emplace(lowercase(word), static_cast<int>(words_.size()));
  if (inserted) words_.push_back(it->first);
  return it->second;
}

int Vocab::id(const std::string& word) const {
  auto it = ids_.find(lowercase(word));
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<int> Vocab::encode(const std::vector<std::string>& words) const {
  std::vector<int> out;
  out.reserve(words.size());
  for (const auto& w : words) {
    std::string lower(w);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
    out.push_back(id(lower));
  }
  return out;
}

// ---- forward-only operations ------------------------------------------------------

std::vector<Vec> encode_instruction(std::span<const int> words, const ModelParams& params) {
  EpisodeTape tape(params);
  tape.encode(words);
  return tape.encoded();
}

AttentionResult text_attend(const Vec& h_prev, std::span<const Vec> states, const ModelParams& params) {
  return attend(params.text_w, h_prev, states, states, nullptr);
}

Vec project_feature(const Vec& feature, const ModelParams& params) { return project(params, feature); }

AttentionResult visual_attend(const Vec& h_prev, std::span<const Vec> views, const ModelParams& params) {
  std::vector<Vec> keys;
  keys.reserve(views.size());
  for (const auto& v : views) keys.push_back(project(params, v));
  return attend(params.vis_w, h_prev, keys, views, nullptr);
}

AgentState policy_step(const Vec& v_hat, const Vec& a_prev, const Vec& attended_text, const Vec& m_prev,
                       const ModelParams& params) {
  require(v_hat.size() == a_prev.size(), "policy step: view/action dimension mismatch");
  auto [h, m] = lstm_forward(params.pol_w, params.pol_b, la::concat({v_hat, a_prev}), attended_text, m_prev, nullptr);
  return {std::move(h), std::move(m)};
}

Vec action_probabilities(const Vec& h, const Vec& attended_text, std::span<const Vec> views,
                         const ModelParams& params) {
  std::vector<Vec> keys;
  for (const auto& v : views) keys.push_back(project(params, v));
  return action_forward(params, h, attended_text, keys, nullptr, nullptr);
}

ShiftOutput shift_probability(const AgentState& state, const Vec& selected_view, const Vec& attended_text,
                              int remaining, const ModelParams& params) {
  ShiftOutput out;
  const auto c = shift_forward(params, state.h, state.m, selected_view, attended_text, remaining, out.clamped);
  out.probability = c.probability;
  out.gated_state.assign(c.cat2.begin() + static_cast<long>(params.c3_w.rows()), c.cat2.end());
  return out;
}

// ---- loss -------------------------------------------------------------------------

std::vector<int> balanced_shift_sample(std::span<const int> targets, std::uint64_t seed) {
  std::vector<int> pos, neg;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == 1) pos.push_back(static_cast<int>(t));
    else if (targets[t] == 0) neg.push_back(static_cast<int>(t));
  }
  const std::size_t m = std::min(pos.size(), neg.size());
  std::mt19937_64 rng(seed);
  auto draw = [&](std::vector<int>& pool) {
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(m);
  };
  draw(pos);
  draw(neg);
  std::vector<int> out(pos);
  out.insert(out.end(), neg.begin(), neg.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> shift_loss_steps(std::span<const int> targets, std::uint64_t seed, bool& class_missing) {
  const auto positives = std::count(targets.begin(), targets.end(), 1);
  const auto negatives = std::count(targets.begin(), targets.end(), 0);
  class_missing = positives == 0 || negatives == 0;
  if (positives == 0) return {};
  if (negatives > 0) return balanced_shift_sample(targets, seed);
  // Nothing to balance against: every positive step contributes.
  std::vector<int> out;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == 1) out.push_back(static_cast<int>(t));
  }
  return out;
}

JointLossResult joint_loss(std::span<const Vec> action_probs, std::span<const int> action_targets,
                           std::span<const double> shift_probs, std::span<const int> shift_targets,
                           std::uint64_t balance_seed) {
  if (action_probs.size() != action_targets.size() || shift_probs.size() != shift_targets.size()) {
    throw ValidationError("joint_loss: probability/target length mismatch");
  }
  JointLossResult r;
  r.d_action_probs.resize(action_probs.size());
  for (std::size_t t = 0; t < action_probs.size(); ++t) {
    r.d_action_probs[t].assign(action_probs[t].size(), 0.0);
    const int y = action_targets[t];
    if (y < 0) continue;
    if (y >= static_cast<int>(action_probs[t].size())) throw ValidationError("joint_loss: action target out of range");
    const double p = action_probs[t][sz(y)];
    if (p > kProbFloor) {
      r.action_term -= std::log(p);
      r.d_action_probs[t][sz(y)] = -1.0 / p;
    } else {
      r.action_term -= std::log(kProbFloor);
    }
  }

  r.d_shift_probs.assign(shift_probs.size(), 0.0);
  r.shift_samples = shift_loss_steps(shift_targets, balance_seed, r.shift_class_missing);
  {
    for (int t : r.shift_samples) {
      const double p = shift_probs[sz(t)];
      if (shift_targets[sz(t)] == 1) {
        if (p > kProbFloor) {
          r.shift_term -= std::log(p);
          r.d_shift_probs[sz(t)] = -1.0 / p;
        } else {
          r.shift_term -= std::log(kProbFloor);
        }
      } else {
        if (1.0 - p > kProbFloor) {
          r.shift_term -= std::log(1.0 - p);
          r.d_shift_probs[sz(t)] = 1.0 / (1.0 - p);
        } else {
          r.shift_term -= std::log(kProbFloor);
        }
      }
    }
  }
  r.loss = r.action_term + r.shift_term;
  return r;
}

// ---- tape -------------------------------------------------------------------------

EpisodeTape::EpisodeTape(const ModelParams& params) : params_(params) {
  const std::size_t H = sz(params.config.hidden_dim);
  state_ = {Vec(H, 0.0), Vec(H, 0.0)};
  prev_action_.assign(sz(params.config.feature_dim), 0.0);
}

void EpisodeTape::encode(std::span<const int> words) {
  require(!words.empty(), "encode_instruction: empty instruction");
  const auto& p = params_;
  const std::size_t H = sz(p.config.hidden_dim);
  words_.assign(words.begin(), words.end());
  encoded_.clear();
  encoder_.clear();
  Vec h(H, 0.0), c(H, 0.0);
  for (int w : words_) {
    if (w < 0 || w >= static_cast<int>(p.embedding.rows())) {
      throw ValidationError("encode_instruction: token id " + std::to_string(w) + " outside the vocabulary");
    }
    LstmCache cache;
    auto [nh, nc] = lstm_forward(p.enc_w, p.enc_b, p.embedding.row(sz(w)), h, c, &cache);
    h = nh;
    c = std::move(nc);
    encoded_.push_back(std::move(nh));
    encoder_.push_back(std::move(cache));
  }
}

const Vec& EpisodeTape::step(int begin, int end, std::vector<Vec> views) {
  require(!encoded_.empty(), "tape: instruction not encoded");
  require(0 <= begin && begin < end && end <= static_cast<int>(encoded_.size()), "tape: bad sub-instruction span");
  const auto& p = params_;
  const std::size_t F = sz(p.config.feature_dim);
  for (const auto& v : views) require(v.size() == F, "tape: view feature dimension mismatch");
  if (!steps_.empty()) require(steps_.back().has_shift, "tape: previous step has no chosen action");

  Step s;
  s.begin = begin;
  s.end = end;
  const std::span<const Vec> words(encoded_.data() + begin, sz(end - begin));
  s.attended_text = attend(p.text_w, state_.h, words, words, &s.text).attended;

  views.push_back(p.stop_feature.values());
  s.views = std::move(views);
  for (const auto& v : s.views) s.keys.push_back(project(p, v));
  s.v_hat = attend(p.vis_w, state_.h, s.keys, s.views, &s.visual).attended;

  s.a_prev = prev_action_;
  s.a_prev_is_stop = prev_action_is_stop_;
  auto [h, m] = lstm_forward(p.pol_w, p.pol_b, la::concat({s.v_hat, s.a_prev}), s.attended_text, state_.m, &s.policy);
  s.h = h;
  s.m = m;
  state_ = {std::move(h), std::move(m)};
  s.probs = action_forward(p, s.h, s.attended_text, s.keys, &s.joint, &s.action_query);
  steps_.push_back(std::move(s));
  return steps_.back().probs;
}

double EpisodeTape::shift(int chosen, int remaining) {
  require(!steps_.empty() && !steps_.back().has_shift, "tape: shift() must follow step()");
  Step& s = steps_.back();
  require(chosen >= 0 && chosen < static_cast<int>(s.views.size()), "tape: chosen option out of range");
  bool clamped = false;
  s.shift = shift_forward(params_, s.h, s.m, s.views[sz(chosen)], s.attended_text, remaining, clamped);
  if (clamped) ++clamped_remaining_;
  s.has_shift = true;
  s.chosen = chosen;
  prev_action_ = s.views[sz(chosen)];
  prev_action_is_stop_ = chosen == static_cast<int>(s.views.size()) - 1;
  return s.shift.probability;
}

void EpisodeTape::set_targets(int action_target, int shift_target) {
  require(!steps_.empty(), "tape: no step recorded");
  steps_.back().action_target = action_target;
  steps_.back().shift_target = shift_target;
}

int EpisodeTape::stop_index() const {
  require(!steps_.empty(), "tape: no step recorded");
  return static_cast<int>(steps_.back().views.size()) - 1;
}

const Vec& EpisodeTape::action_probs(std::size_t t) const { return steps_.at(t).probs; }
double EpisodeTape::shift_prob(std::size_t t) const { return steps_.at(t).shift.probability; }
const Vec& EpisodeTape::text_weights(std::size_t t) const { return steps_.at(t).text.weights; }

JointLossResult EpisodeTape::loss(std::uint64_t balance_seed) const {
  std::vector<Vec> probs;
  std::vector<int> action_targets, shift_targets;
  Vec shift_probs;
  for (const auto& s : steps_) {
    probs.push_back(s.probs);
    action_targets.push_back(s.action_target);
    shift_probs.push_back(s.has_shift ? s.shift.probability : 0.5);
    shift_targets.push_back(s.has_shift ? s.shift_target : -1);
  }
  return joint_loss(probs, action_targets, shift_probs, shift_targets, balance_seed);
}

JointLossResult EpisodeTape::backward(std::uint64_t balance_seed, ModelParams& g) const {
  const auto& p = params_;
  JointLossResult res = loss(balance_seed);
  const std::size_t H = sz(p.config.hidden_dim), F = sz(p.config.feature_dim), G = sz(p.config.mlp_dim);

  Vec dh_next(H, 0.0), dm_next(H, 0.0);
  std::vector<Vec> dU(encoded_.size(), Vec(H, 0.0));
  for (std::size_t t = steps_.size(); t-- > 0;) {
    const Step& s = steps_[t];
    Vec dh = dh_next, dm = dm_next, dtext(H, 0.0);
    const std::size_t n = s.views.size();
    std::vector<Vec> dkeys(n, Vec(G, 0.0)), dviews(n, Vec(F, 0.0));

    if (s.action_target >= 0) {
      const Vec dz = la::softmax_backward(s.probs, res.d_action_probs[t]);
      Vec dq(G, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        la::axpy(dz[i], s.keys[i], dq);
        la::axpy(dz[i], s.action_query, dkeys[i]);
      }
      la::outer_acc(g.act_w, dq, s.joint);
      Vec dj(2 * H, 0.0);
      la::matTvec_acc(p.act_w, dq, dj);
      la::axpy(1.0, head(dj, H), dh);
      la::axpy(1.0, tail(dj, H), dtext);
    }
    if (s.has_shift && res.d_shift_probs[t] != 0.0) {
      shift_backward(p, s.shift, res.d_shift_probs[t], g, dh, dm, dviews[sz(s.chosen)], dtext);
    }

    Vec dm_prev;
    const Vec dinput = lstm_backward(p.pol_w, s.policy, dh, dm, g.pol_w, g.pol_b, dm_prev);
    la::axpy(1.0, tail(dinput, 2 * F), dtext);
    const Vec dv_hat(dinput.begin(), dinput.begin() + static_cast<long>(F));
    if (s.a_prev_is_stop) la::add_to(g.stop_feature, std::span<const double>(dinput.data() + F, F));

    Vec dh_prev(H, 0.0);
    attend_backward(p.vis_w, s.visual, s.keys, s.views, dv_hat, g.vis_w, dh_prev, dkeys, dviews);
    for (std::size_t i = 0; i < n; ++i) {
      Vec da(G);
      for (std::size_t k = 0; k < G; ++k) da[k] = dkeys[i][k] * (1.0 - s.keys[i][k] * s.keys[i][k]);
      la::outer_acc(g.mlp_w, da, s.views[i]);
      la::add_to(g.mlp_b, da);
      if (i + 1 == n) la::matTvec_acc(p.mlp_w, da, dviews[i]);
    }
    la::add_to(g.stop_feature, dviews.back());

    const std::span<const Vec> words(encoded_.data() + s.begin, sz(s.end - s.begin));
    std::vector<Vec> dwords(words.size(), Vec(H, 0.0));
    attend_backward(p.text_w, s.text, words, words, dtext, g.text_w, dh_prev, dwords, dwords);
    for (std::size_t j = 0; j < words.size(); ++j) la::axpy(1.0, dwords[j], dU[sz(s.begin) + j]);

    dh_next = std::move(dh_prev);
    dm_next = std::move(dm_prev);
  }

  Vec dh(H, 0.0), dc(H, 0.0);
  const std::size_t D = sz(p.config.embed_dim);
  for (std::size_t j = encoded_.size(); j-- > 0;) {
    la::axpy(1.0, dU[j], dh);
    Vec dc_prev;
    const Vec dinput = lstm_backward(p.enc_w, encoder_[j], dh, dc, g.enc_w, g.enc_b, dc_prev);
    la::axpy(1.0, head(dinput, D), g.embedding.row(sz(words_[j])));
    dh.assign(dinput.begin() + static_cast<long>(D), dinput.end());
    dc = std::move(dc_prev);
  }
  return res;
}

// ---- gradient verification ----------------------------------------------------------

namespace {

EpisodeTape replay(const ModelParams& params, const GradCheckBundle& b) {
  EpisodeTape tape(params);
  tape.encode(b.words);
  const int L = static_cast<int>(b.sub_spans.size());
  for (const auto& st : b.steps) {
    const auto [begin, end] = b.sub_spans.at(sz(st.sub_idx));
    tape.step(begin, end, st.views);
    tape.shift(st.action_target, L - 1 - st.sub_idx);
    tape.set_targets(st.action_target, st.shift_target);
  }
  return tape;
}

}  // namespace

double bundle_loss(const ModelParams& params, const GradCheckBundle& bundle, ModelParams* grads) {
  const EpisodeTape tape = replay(params, bundle);
  if (grads) return tape.backward(bundle.balance_seed, *grads).loss;
  return tape.loss(bundle.balance_seed).loss;
}

namespace {

// Forward-only replay of a bundle in scalar type T; mirrors the tape.
template <class T>
class Replay {
 public:
  using V = std::vector<T>;

  explicit Replay(const ModelParams& p) : p_(p) {}

  T loss(const GradCheckBundle& b) const {
    const std::size_t H = sz(p_.config.hidden_dim), F = sz(p_.config.feature_dim);
    std::vector<V> encoded;
    V h(H, T(0)), c(H, T(0));
    for (int w : b.words) {
      require(w >= 0 && w < static_cast<int>(p_.embedding.rows()), "replay: token outside the vocabulary");
      const auto row = p_.embedding.row(sz(w));
      lstm(p_.enc_w, p_.enc_b, V(row.begin(), row.end()), h, c);
      encoded.push_back(h);
    }
    const int L = static_cast<int>(b.sub_spans.size());
    V state_h(H, T(0)), state_m(H, T(0)), a_prev(F, T(0));
    T action_term(0);
    std::vector<T> shift_probs;
    std::vector<int> shift_targets;
    for (const auto& st : b.steps) {
      const auto [begin, end] = b.sub_spans.at(sz(st.sub_idx));
      const std::vector<V> words(encoded.begin() + begin, encoded.begin() + end);
      const V text = attend(p_.text_w, state_h, words, words);
      std::vector<V> views;
      for (const auto& v : st.views) views.emplace_back(v.begin(), v.end());
      views.emplace_back(p_.stop_feature.values().begin(), p_.stop_feature.values().end());
      std::vector<V> keys;
      for (const auto& v : views) keys.push_back(project(v));
      const V v_hat = attend(p_.vis_w, state_h, keys, views);
      V input = v_hat;
      input.insert(input.end(), a_prev.begin(), a_prev.end());
      V ph = text, pm = state_m;
      lstm(p_.pol_w, p_.pol_b, input, ph, pm);
      state_h = ph;
      state_m = pm;

      V joint = ph;
      joint.insert(joint.end(), text.begin(), text.end());
      const V query = affine(p_.act_w, nullptr, joint);
      V logits;
      for (const auto& k : keys) logits.push_back(dot(query, k));
      const V probs = softmax(logits);
      if (st.action_target >= 0) action_term -= std::log(std::max(probs.at(sz(st.action_target)), T(kProbFloor)));

      const V& view = views.at(sz(st.action_target));
      shift_probs.push_back(shift(ph, pm, view, text, L - 1 - st.sub_idx));
      shift_targets.push_back(st.shift_target);
      a_prev = view;
    }
    bool missing = false;
    T shift_term(0);
    for (int t : shift_loss_steps(shift_targets, b.balance_seed, missing)) {
      const T q = shift_probs[sz(t)];
      shift_term -= shift_targets[sz(t)] == 1 ? std::log(std::max(q, T(kProbFloor)))
                                              : std::log(std::max(T(1) - q, T(kProbFloor)));
    }
    return action_term + shift_term;
  }

 private:
  static T sigmoid(T x) { return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x)); }

  static T dot(const V& a, const V& b) {
    T s(0);
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }

  static V affine(const Tensor& w, const Tensor* b, const V& x) {
    V y(w.rows(), T(0));
    for (std::size_t r = 0; r < w.rows(); ++r) {
      T acc = b ? T((*b)[r]) : T(0);
      for (std::size_t k = 0; k < w.cols(); ++k) acc += T(w(r, k)) * x[k];
      y[r] = acc;
    }
    return y;
  }

  static V softmax(const V& z) {
    const T top = *std::max_element(z.begin(), z.end());
    V e(z.size());
    T sum(0);
    for (std::size_t i = 0; i < z.size(); ++i) sum += (e[i] = std::exp(z[i] - top));
    for (auto& v : e) v /= sum;
    return e;
  }

  static void lstm(const Tensor& w, const Tensor& b, const V& x, V& h, V& c) {
    const std::size_t H = h.size();
    V input = x;
    input.insert(input.end(), h.begin(), h.end());
    const V a = affine(w, &b, input);
    for (std::size_t k = 0; k < H; ++k) {
      const T i = sigmoid(a[k]), f = sigmoid(a[H + k]), g = std::tanh(a[2 * H + k]), o = sigmoid(a[3 * H + k]);
      c[k] = f * c[k] + i * g;
      h[k] = o * std::tanh(c[k]);
    }
  }

  static V attend(const Tensor& w, const V& h_prev, const std::vector<V>& keys, const std::vector<V>& values) {
    const V q = affine(w, nullptr, h_prev);
    V z;
    for (const auto& k : keys) z.push_back(dot(q, k));
    const V a = softmax(z);
    V out(values[0].size(), T(0));
    for (std::size_t j = 0; j < values.size(); ++j) {
      for (std::size_t k = 0; k < out.size(); ++k) out[k] += a[j] * values[j][k];
    }
    return out;
  }

  V project(const V& v) const {
    V k = affine(p_.mlp_w, &p_.mlp_b, v);
    for (auto& x : k) x = std::tanh(x);
    return k;
  }

  T shift(const V& h, const V& m, const V& view, const V& text, int remaining) const {
    const int capacity = p_.config.remaining_capacity;
    V cat1 = affine(p_.c0_w, &p_.c0_b, h);
    cat1.insert(cat1.end(), view.begin(), view.end());
    cat1.insert(cat1.end(), text.begin(), text.end());
    V gate = affine(p_.c1_w, &p_.c1_b, cat1);
    V e(sz(capacity), T(0));
    e[sz(std::min(remaining, capacity - 1))] = T(1);
    V cat2 = affine(p_.c3_w, &p_.c3_b, e);
    for (std::size_t k = 0; k < m.size(); ++k) cat2.push_back(sigmoid(gate[k]) * std::tanh(m[k]));
    return sigmoid(affine(p_.c2_w, &p_.c2_b, cat2)[0]);
  }

  const ModelParams& p_;
};

}  // namespace

double reference_loss(const ModelParams& params, const GradCheckBundle& bundle) {
  return static_cast<double>(Replay<long double>(params).loss(bundle));
}

GradCheckReport grad_check(const ModelParams& params, const GradCheckBundle& bundle, double eps,
                           bool extended_reference) {
  ModelParams analytic = params.zeros_like();
  const double base = bundle_loss(params, bundle, &analytic);
  if (!std::isfinite(base)) throw NumericError("grad_check: loss is not finite at the base point");
  if (!analytic.all_finite()) throw NumericError("grad_check: analytic gradient is not finite");

  GradCheckReport report;
  ModelParams probe = params;
  const Replay<long double> extended(probe);
  auto probe_groups = probe.named();
  auto grad_groups = analytic.named();
  for (std::size_t gi = 0; gi < probe_groups.size(); ++gi) {
    auto [name, tensor] = probe_groups[gi];
    const Tensor& grad = *grad_groups[gi].second;
    double worst = 0.0;
    for (std::size_t k = 0; k < tensor->size(); ++k) {
      const double saved = (*tensor)[k];
      (*tensor)[k] = saved + eps;
      const long double plus = extended_reference ? extended.loss(bundle) : bundle_loss(probe, bundle);
      (*tensor)[k] = saved - eps;
      const long double minus = extended_reference ? extended.loss(bundle) : bundle_loss(probe, bundle);
      (*tensor)[k] = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericError("grad_check: non-finite loss while perturbing " + std::string(name) + "[" +
                           std::to_string(k) + "]");
      }
      const double numeric = static_cast<double>((plus - minus) / (2.0L * eps));
      const double a = grad[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
    report.max_relative_error.emplace_back(std::string(name), worst);
    report.worst = std::max(report.worst, worst);
  }
  return report;
}

GradCheckBundle make_gradcheck_bundle(const ModelConfig& config, std::uint64_t seed, int steps, int sub_instructions) {
  require(steps >= 1 && sub_instructions >= 1 && sub_instructions <= steps, "gradcheck bundle: bad sizes");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> word(1, config.vocab_size - 1);
  std::uniform_int_distribution<int> chunk_len(2, 4);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> angle(-3.14159, 3.14159);

  GradCheckBundle b;
  b.balance_seed = seed ^ 0x9e3779b97f4a7c15ULL;
  for (int i = 0; i < sub_instructions; ++i) {
    const int begin = static_cast<int>(b.words.size());
    const int len = chunk_len(rng);
    for (int k = 0; k < len; ++k) b.words.push_back(config.vocab_size > 1 ? word(rng) : 0);
    b.sub_spans.emplace_back(begin, begin + len);
  }
  const std::size_t F = sz(config.feature_dim);
  for (int t = 0; t < steps; ++t) {
    GradCheckStep st;
    st.sub_idx = std::min(sub_instructions - 1, t * sub_instructions / steps);
    const int n_views = 2 + (t % 2);
    for (int v = 0; v < n_views; ++v) {
      Vec f(F);
      for (auto& x : f) x = noise(rng);
      if (F >= 4) {
        const double psi = angle(rng), theta = angle(rng) / 6.0;
        f[F - 4] = std::sin(psi);
        f[F - 3] = std::cos(psi);
        f[F - 2] = std::sin(theta);
        f[F - 1] = std::cos(theta);
      }
      st.views.push_back(std::move(f));
    }
    const bool last = t + 1 == steps;
    st.action_target = last ? n_views : static_cast<int>(rng() % sz(n_views));
    const int next_sub = last ? st.sub_idx : std::min(sub_instructions - 1, (t + 1) * sub_instructions / steps);
    st.shift_target = last || next_sub != st.sub_idx ? 1 : 0;
    b.steps.push_back(std::move(st));
  }
  return b;
}

void save_checkpoint(const std::string& path, const ModelParams& params, const Vocab& vocab,
                     const nlohmann::json& extra) {
  nlohmann::json doc = params.to_json();
  doc["format"] = "subnav-checkpoint";
  doc["version"] = 1;
  doc["vocab"] = vocab.words();
  doc["extra"] = extra;
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint " + path);
  out << doc.dump() << '\n';
}

std::pair<ModelParams, Vocab> load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint " + path);
  nlohmann::json doc;
  try {
    in >> doc;
    if (doc.value("format", std::string{}) != "subnav-checkpoint") throw ValidationError(path + ": not a checkpoint");
    if (doc.value("version", 0) != 1) throw ValidationError(path + ": unsupported checkpoint version");
    Vocab vocab(doc.at("vocab").get<std::vector<std::string>>());
    ModelParams params = ModelParams::from_json(doc);
    if (static_cast<int>(vocab.size()) > params.config.vocab_size) {
      throw ValidationError(path + ": vocabulary larger than the embedding table");
    }
    return {std::move(params), std::move(vocab)};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

}  // namespace subnav
