// SPDX-License-Identifier: Apache-2.0
#include "slu/eda.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include "slu/crf.hpp"
#include "slu/error.hpp"
#include "slu/parallel.hpp"
#include "slu/rng.hpp"
#include "slu/text.hpp"

namespace slu {

namespace {

constexpr const char* kMagic = "slu-eda";
constexpr std::size_t kVersion = 1;
constexpr std::size_t kShards = 8;
constexpr std::size_t npos = static_cast<std::size_t>(-1);

constexpr unsigned kEncodedFamilies = static_cast<unsigned>(FeatureFamily::sem_categories) |
                                      static_cast<unsigned>(FeatureFamily::syntactic) |
                                      static_cast<unsigned>(FeatureFamily::morphological);

std::vector<std::string> feature_keys_of(const Token& t, const Utterance& u, const FeatureVectorSpec& spec) {
  const FeatureVectorSpec sub{spec.families & kEncodedFamilies, spec.bins};
  std::vector<std::string> keys;
  if (sub.families == 0) return keys;
  for (const auto& f : token_features(t, u, sub)) keys.push_back(f.key());
  return keys;
}

}  // namespace

struct EdaModel::GruTrace {
  std::vector<double> x, h, z, r, n, rh;
};

struct EdaModel::Trace {
  std::vector<std::vector<double>> x;
  std::vector<GruTrace> fwd, bwd;
  std::vector<double> mean, s0;
  std::vector<std::vector<double>> keys;
  // Per decoder step.
  std::vector<std::size_t> prev;
  std::vector<std::vector<double>> energy_act;  // I x A tanh values
  std::vector<std::vector<double>> alpha, context, state, probs;
  std::vector<GruTrace> dec;
};

EdaModel::EdaModel(std::vector<std::string> labels, std::vector<std::string> vocabulary,
                   std::vector<std::string> features, const EdaDims& dims, const FeatureVectorSpec& spec,
                   std::uint64_t seed)
    : labels_(std::move(labels)), vocab_(std::move(vocabulary)), features_(std::move(features)), dims_(dims),
      spec_(spec) {
  if (labels_.empty()) throw ConfigError("EDA label inventory is empty");
  if (dims_.embed < 1 || dims_.hidden < 1 || dims_.decoder < 1 || dims_.attention < 1 || dims_.label_embed < 1)
    throw ConfigError("EDA dimensions must be positive");
  spec_.check();
  make_layout();
  index();
  Rng rng(derive_seed(seed, "eda-init"));
  for (const auto* b : {&word_emb_, &feat_emb_, &label_emb_}) {
    double* p = nn::at(params_, *b);
    for (std::size_t i = 0; i < b->size(); ++i) p[i] = 0.1 * rng.normal();
  }
  for (const auto* g : {&fwd_, &bwd_, &dec_}) {
    nn::glorot(params_, g->wx, rng);
    nn::glorot(params_, g->uh, rng);
  }
  for (const auto* b : {&init_w_, &att_w_, &att_u_, &att_v_, &out_w_}) nn::glorot(params_, *b, rng);
}

void EdaModel::make_layout() {
  dense_ = 2 * (spec_.has(FeatureFamily::pap) + spec_.has(FeatureFamily::mlp_conf));
  const std::size_t E = dims_.embed, H = dims_.hidden, S = dims_.decoder, A = dims_.attention,
                    Y = dims_.label_embed, L = labels_.size();
  nn::Layout lay;
  word_emb_ = lay.add(vocab_.size() + 1, E);
  feat_emb_ = lay.add(features_.size(), E);
  label_emb_ = lay.add(L + 1, Y);
  auto gru = [&](std::size_t in, std::size_t out) {
    Gru g;
    g.in = in;
    g.out = out;
    g.wx = lay.add(3 * out, in);
    g.uh = lay.add(3 * out, out);
    g.b = lay.add(3 * out);
    return g;
  };
  fwd_ = gru(E + dense_, H);
  bwd_ = gru(E + dense_, H);
  init_w_ = lay.add(S, 2 * H);
  init_b_ = lay.add(S);
  att_w_ = lay.add(A, S);
  att_u_ = lay.add(A, 2 * H);
  att_v_ = lay.add(A);
  dec_ = gru(Y + 2 * H + (dims_.aligned_input ? 2 * H : 0), S);
  out_w_ = lay.add(L, S + 2 * H + Y);
  out_b_ = lay.add(L);
  params_.assign(lay.size(), 0.0);
}

std::vector<std::pair<std::string, nn::Block>> EdaModel::blocks() const {
  std::vector<std::pair<std::string, nn::Block>> out;
  auto gru = [&](const std::string& name, const Gru& g) {
    out.emplace_back(name + ".wx", g.wx);
    out.emplace_back(name + ".uh", g.uh);
    out.emplace_back(name + ".b", g.b);
  };
  out.emplace_back("word_emb", word_emb_);
  out.emplace_back("feat_emb", feat_emb_);
  out.emplace_back("label_emb", label_emb_);
  gru("fwd", fwd_);
  gru("bwd", bwd_);
  out.emplace_back("init_w", init_w_);
  out.emplace_back("init_b", init_b_);
  out.emplace_back("att_w", att_w_);
  out.emplace_back("att_u", att_u_);
  out.emplace_back("att_v", att_v_);
  gru("dec", dec_);
  out.emplace_back("out_w", out_w_);
  out.emplace_back("out_b", out_b_);
  return out;
}

void EdaModel::index() {
  label_index_.clear();
  word_index_.clear();
  feature_index_.clear();
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (!label_index_.emplace(labels_[i], i).second) throw ConfigError("duplicate EDA label " + labels_[i]);
  for (std::size_t i = 0; i < vocab_.size(); ++i) word_index_.emplace(vocab_[i], i + 1);
  for (std::size_t i = 0; i < features_.size(); ++i) feature_index_.emplace(features_[i], i);
}

std::size_t EdaModel::label_id(const std::string& label) const {
  auto it = label_index_.find(label);
  return it == label_index_.end() ? npos : it->second;
}

std::vector<EdaInput> EdaModel::inputs(const Utterance& utt) const {
  std::vector<EdaInput> out(utt.tokens.size());
  for (std::size_t i = 0; i < utt.tokens.size(); ++i) {
    const auto& t = utt.tokens[i];
    auto& in = out[i];
    if (auto it = word_index_.find(text::lowercase(t.surface)); it != word_index_.end()) in.word = it->second;
    for (const auto& k : feature_keys_of(t, utt, spec_))
      if (auto it = feature_index_.find(k); it != feature_index_.end()) in.features.push_back(it->second);
    auto dense = [&](const std::optional<double>& c) {
      in.dense.push_back(c ? *c : 0.0);
      in.dense.push_back(c ? 1.0 : 0.0);
    };
    if (spec_.has(FeatureFamily::pap)) dense(t.pap);
    if (spec_.has(FeatureFamily::mlp_conf)) dense(t.mlp_conf);
  }
  return out;
}

void EdaModel::input_vector(const EdaInput& in, double* x) const {
  const std::size_t E = dims_.embed;
  const double* w = nn::at(params_, word_emb_) + in.word * E;
  std::copy(w, w + E, x);
  if (!in.features.empty()) {
    const double scale = 1.0 / static_cast<double>(in.features.size());
    for (auto f : in.features) {
      const double* row = nn::at(params_, feat_emb_) + f * E;
      for (std::size_t k = 0; k < E; ++k) x[k] += scale * row[k];
    }
  }
  if (in.dense.size() != dense_) throw PreconditionError("EDA dense input has the wrong width");
  std::copy(in.dense.begin(), in.dense.end(), x + E);
}

void EdaModel::gru_step(const Gru& g, const double* x, const double* h, double* h_next, GruTrace* tr) const {
  const std::size_t H = g.out;
  std::vector<double> a(3 * H), z(H), r(H), n(H), rh(H), un(H);
  nn::gemv(nn::at(params_, g.wx), 3 * H, g.in, x, a.data());
  const double* b = nn::at(params_, g.b);
  const double* uz = nn::at(params_, g.uh);
  const double* ur = uz + H * H;
  const double* unw = ur + H * H;
  for (std::size_t k = 0; k < 3 * H; ++k) a[k] += b[k];
  nn::gemv(uz, H, H, h, z.data());
  nn::gemv(ur, H, H, h, r.data());
  for (std::size_t k = 0; k < H; ++k) {
    z[k] = nn::sigmoid(a[k] + z[k]);
    r[k] = nn::sigmoid(a[H + k] + r[k]);
    rh[k] = r[k] * h[k];
  }
  nn::gemv(unw, H, H, rh.data(), un.data());
  for (std::size_t k = 0; k < H; ++k) {
    n[k] = std::tanh(a[2 * H + k] + un[k]);
    h_next[k] = z[k] * h[k] + (1.0 - z[k]) * n[k];
  }
  if (tr) {
    tr->x.assign(x, x + g.in);
    tr->h.assign(h, h + H);
    tr->z = std::move(z);
    tr->r = std::move(r);
    tr->n = std::move(n);
    tr->rh = std::move(rh);
  }
}

void EdaModel::gru_backward(const Gru& g, const GruTrace& tr, const double* dh_next, double* dx, double* dh,
                            std::vector<double>& grad) const {
  const std::size_t H = g.out;
  std::vector<double> da(3 * H), drh(H, 0.0);
  for (std::size_t k = 0; k < H; ++k) {
    const double dz = dh_next[k] * (tr.h[k] - tr.n[k]);
    const double dn = dh_next[k] * (1.0 - tr.z[k]);
    dh[k] += dh_next[k] * tr.z[k];
    da[k] = dz * tr.z[k] * (1.0 - tr.z[k]);
    da[2 * H + k] = dn * (1.0 - tr.n[k] * tr.n[k]);
  }
  const double* uz = nn::at(params_, g.uh);
  double* guz = nn::at(grad, g.uh);
  const double* dan = da.data() + 2 * H;
  nn::gemv_t(uz + 2 * H * H, H, H, dan, drh.data());
  nn::outer(guz + 2 * H * H, H, H, dan, tr.rh.data());
  for (std::size_t k = 0; k < H; ++k) {
    da[H + k] = drh[k] * tr.h[k] * tr.r[k] * (1.0 - tr.r[k]);
    dh[k] += drh[k] * tr.r[k];
  }
  nn::gemv_t(uz, H, H, da.data(), dh);
  nn::gemv_t(uz + H * H, H, H, da.data() + H, dh);
  nn::outer(guz, H, H, da.data(), tr.h.data());
  nn::outer(guz + H * H, H, H, da.data() + H, tr.h.data());
  nn::outer(nn::at(grad, g.wx), 3 * H, g.in, da.data(), tr.x.data());
  double* gb = nn::at(grad, g.b);
  for (std::size_t k = 0; k < 3 * H; ++k) gb[k] += da[k];
  if (dx) nn::gemv_t(nn::at(params_, g.wx), 3 * H, g.in, da.data(), dx);
}

EncoderAnnotations EdaModel::run_encoder(const std::vector<EdaInput>& x, Trace* tr) const {
  const std::size_t I = x.size(), H = dims_.hidden, D = dims_.embed + dense_;
  EncoderAnnotations ann;
  ann.width = 2 * H;
  ann.rows.assign(I, std::vector<double>(2 * H, 0.0));
  std::vector<std::vector<double>> xs(I, std::vector<double>(D));
  for (std::size_t i = 0; i < I; ++i) input_vector(x[i], xs[i].data());
  if (tr) {
    tr->fwd.resize(I);
    tr->bwd.resize(I);
  }
  std::vector<double> h(H, 0.0), next(H);
  for (std::size_t i = 0; i < I; ++i) {
    gru_step(fwd_, xs[i].data(), h.data(), next.data(), tr ? &tr->fwd[i] : nullptr);
    h = next;
    std::copy(h.begin(), h.end(), ann.rows[i].begin());
  }
  std::fill(h.begin(), h.end(), 0.0);
  for (std::size_t i = I; i-- > 0;) {
    gru_step(bwd_, xs[i].data(), h.data(), next.data(), tr ? &tr->bwd[i] : nullptr);
    h = next;
    std::copy(h.begin(), h.end(), ann.rows[i].begin() + static_cast<std::ptrdiff_t>(H));
  }
  if (tr) tr->x = std::move(xs);
  return ann;
}

EncoderAnnotations EdaModel::encode(const std::vector<EdaInput>& x) const { return run_encoder(x, nullptr); }
EncoderAnnotations EdaModel::encode(const Utterance& utt) const { return run_encoder(inputs(utt), nullptr); }

std::vector<double> EdaModel::initial_state(const EncoderAnnotations& h) const {
  const std::size_t S = dims_.decoder, W = h.width;
  std::vector<double> mean(W, 0.0), s(S);
  for (const auto& row : h.rows)
    for (std::size_t k = 0; k < W; ++k) mean[k] += row[k];
  if (h.size())
    for (auto& m : mean) m /= static_cast<double>(h.size());
  nn::gemv(nn::at(params_, init_w_), S, W, mean.data(), s.data());
  const double* b = nn::at(params_, init_b_);
  for (std::size_t k = 0; k < S; ++k) s[k] = std::tanh(s[k] + b[k]);
  return s;
}

AttentionStep EdaModel::attend(const std::vector<double>& state, const EncoderAnnotations& h) const {
  if (h.size() == 0) throw PreconditionError("attention over an empty annotation sequence");
  const std::size_t A = dims_.attention, W = h.width, I = h.size();
  std::vector<double> q(A), key(A);
  nn::gemv(nn::at(params_, att_w_), A, dims_.decoder, state.data(), q.data());
  const double* v = nn::at(params_, att_v_);
  AttentionStep out;
  out.weights.resize(I);
  for (std::size_t j = 0; j < I; ++j) {
    nn::gemv(nn::at(params_, att_u_), A, W, h.rows[j].data(), key.data());
    double e = 0.0;
    for (std::size_t k = 0; k < A; ++k) e += v[k] * std::tanh(q[k] + key[k]);
    out.weights[j] = e;
  }
  nn::softmax(out.weights.data(), I);
  out.context.assign(W, 0.0);
  for (std::size_t j = 0; j < I; ++j)
    for (std::size_t k = 0; k < W; ++k) out.context[k] += out.weights[j] * h.rows[j][k];
  return out;
}

EdaDecoding EdaModel::decode(const EncoderAnnotations& h, const std::vector<std::size_t>* forced) const {
  return run_decoder(h, forced, nullptr);
}

EdaDecoding EdaModel::run_decoder(const EncoderAnnotations& h, const std::vector<std::size_t>* forced,
                                  Trace* tr) const {
  const std::size_t I = h.size(), W = h.width, A = dims_.attention, S = dims_.decoder, Y = dims_.label_embed,
                    L = labels_.size();
  if (forced && forced->size() != I) throw PreconditionError("forced labels differ in length from the input");
  EdaDecoding out;
  if (I == 0) return out;

  std::vector<std::vector<double>> keys(I, std::vector<double>(A));
  for (std::size_t j = 0; j < I; ++j) nn::gemv(nn::at(params_, att_u_), A, W, h.rows[j].data(), keys[j].data());
  std::vector<double> s = initial_state(h);
  if (tr) {
    tr->keys = keys;
    tr->s0 = s;
  }
  const double* v = nn::at(params_, att_v_);
  const std::size_t Dd = dec_.in, Do = S + W + Y;
  std::vector<double> q(A), u(Dd), next(S), zo(Do);
  std::size_t prev = L;
  for (std::size_t t = 0; t < I; ++t) {
    nn::gemv(nn::at(params_, att_w_), A, S, s.data(), q.data());
    std::vector<double> act(I * A), alpha(I), ctx(W, 0.0);
    for (std::size_t j = 0; j < I; ++j) {
      double e = 0.0;
      for (std::size_t k = 0; k < A; ++k) {
        act[j * A + k] = std::tanh(q[k] + keys[j][k]);
        e += v[k] * act[j * A + k];
      }
      alpha[j] = e;
    }
    nn::softmax(alpha.data(), I);
    for (std::size_t j = 0; j < I; ++j)
      for (std::size_t k = 0; k < W; ++k) ctx[k] += alpha[j] * h.rows[j][k];

    const double* ley = nn::at(params_, label_emb_) + prev * Y;
    std::copy(ley, ley + Y, u.begin());
    std::copy(ctx.begin(), ctx.end(), u.begin() + static_cast<std::ptrdiff_t>(Y));
    if (dims_.aligned_input) std::copy(h.rows[t].begin(), h.rows[t].end(), u.begin() + static_cast<std::ptrdiff_t>(Y + W));
    GruTrace* gt = nullptr;
    if (tr) gt = &tr->dec.emplace_back();
    gru_step(dec_, u.data(), s.data(), next.data(), gt);
    s = next;

    std::copy(s.begin(), s.end(), zo.begin());
    std::copy(ctx.begin(), ctx.end(), zo.begin() + static_cast<std::ptrdiff_t>(S));
    std::copy(ley, ley + Y, zo.begin() + static_cast<std::ptrdiff_t>(S + W));
    std::vector<double> p(L);
    nn::gemv(nn::at(params_, out_w_), L, Do, zo.data(), p.data());
    const double* ob = nn::at(params_, out_b_);
    for (std::size_t k = 0; k < L; ++k) p[k] += ob[k];
    nn::softmax(p.data(), L);
    const std::size_t y = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());

    if (tr) {
      tr->prev.push_back(prev);
      tr->energy_act.push_back(std::move(act));
      tr->alpha.push_back(alpha);
      tr->context.push_back(ctx);
      tr->state.push_back(s);
      tr->probs.push_back(p);
    }
    out.labels.push_back(y);
    out.attention.push_back(std::move(alpha));
    out.distributions.push_back(std::move(p));
    prev = forced ? (*forced)[t] : y;
  }
  return out;
}

double EdaModel::loss_sum(const Utterance& utt, std::vector<double>* grad) const {
  const std::size_t I = utt.tokens.size();
  if (I == 0) return 0.0;
  std::vector<std::size_t> gold(I);
  for (std::size_t i = 0; i < I; ++i) {
    gold[i] = label_id(utt.tokens[i].label);
    if (gold[i] == npos)
      throw DataError("utterance " + utt.id + ": label '" + utt.tokens[i].label + "' is not in the EDA inventory");
  }
  Trace tr;
  const auto x = inputs(utt);
  const auto h = run_encoder(x, grad ? &tr : nullptr);
  const auto dec = run_decoder(h, &gold, grad ? &tr : nullptr);
  double loss = 0.0;
  for (std::size_t t = 0; t < I; ++t) loss -= std::log(std::max(dec.distributions[t][gold[t]], 1e-300));
  if (!grad) return loss;

  auto& g = *grad;
  const std::size_t W = h.width, H = dims_.hidden, A = dims_.attention, S = dims_.decoder, Y = dims_.label_embed,
                    L = labels_.size(), Do = S + W + Y, E = dims_.embed;
  std::vector<std::vector<double>> dann(I, std::vector<double>(W, 0.0)), dkeys(I, std::vector<double>(A, 0.0));
  std::vector<double> ds_next(S, 0.0), dout(L), dz(Do), du(dec_.in), ds_prev(S), zo(Do), dq(A), dalpha(I);
  const double* v = nn::at(params_, att_v_);
  for (std::size_t t = I; t-- > 0;) {
    const std::size_t prev = tr.prev[t];
    const double* ley = nn::at(params_, label_emb_) + prev * Y;
    double* gley = nn::at(g, label_emb_) + prev * Y;

    for (std::size_t k = 0; k < L; ++k) dout[k] = tr.probs[t][k] - (k == gold[t] ? 1.0 : 0.0);
    std::copy(tr.state[t].begin(), tr.state[t].end(), zo.begin());
    std::copy(tr.context[t].begin(), tr.context[t].end(), zo.begin() + static_cast<std::ptrdiff_t>(S));
    std::copy(ley, ley + Y, zo.begin() + static_cast<std::ptrdiff_t>(S + W));
    nn::outer(nn::at(g, out_w_), L, Do, dout.data(), zo.data());
    double* gob = nn::at(g, out_b_);
    for (std::size_t k = 0; k < L; ++k) gob[k] += dout[k];
    std::fill(dz.begin(), dz.end(), 0.0);
    nn::gemv_t(nn::at(params_, out_w_), L, Do, dout.data(), dz.data());

    for (std::size_t k = 0; k < S; ++k) ds_next[k] += dz[k];
    std::vector<double> dc(dz.begin() + static_cast<std::ptrdiff_t>(S), dz.begin() + static_cast<std::ptrdiff_t>(S + W));
    for (std::size_t k = 0; k < Y; ++k) gley[k] += dz[S + W + k];

    std::fill(du.begin(), du.end(), 0.0);
    std::fill(ds_prev.begin(), ds_prev.end(), 0.0);
    gru_backward(dec_, tr.dec[t], ds_next.data(), du.data(), ds_prev.data(), g);
    for (std::size_t k = 0; k < Y; ++k) gley[k] += du[k];
    for (std::size_t k = 0; k < W; ++k) dc[k] += du[Y + k];
    if (dims_.aligned_input)
      for (std::size_t k = 0; k < W; ++k) dann[t][k] += du[Y + W + k];

    // Attention: c = sum_j alpha_j h_j, alpha = softmax(v . tanh(W s + U h_j)).
    const auto& alpha = tr.alpha[t];
    double mean_da = 0.0;
    for (std::size_t j = 0; j < I; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < W; ++k) {
        d += dc[k] * h.rows[j][k];
        dann[j][k] += alpha[j] * dc[k];
      }
      dalpha[j] = d;
      mean_da += alpha[j] * d;
    }
    std::fill(dq.begin(), dq.end(), 0.0);
    double* gv = nn::at(g, att_v_);
    const auto& act = tr.energy_act[t];
    for (std::size_t j = 0; j < I; ++j) {
      const double de = alpha[j] * (dalpha[j] - mean_da);
      if (de == 0.0) continue;
      for (std::size_t k = 0; k < A; ++k) {
        const double a = act[j * A + k];
        gv[k] += de * a;
        const double dpre = de * v[k] * (1.0 - a * a);
        dq[k] += dpre;
        dkeys[j][k] += dpre;
      }
    }
    const std::vector<double>& s_before = t ? tr.state[t - 1] : tr.s0;
    nn::outer(nn::at(g, att_w_), A, S, dq.data(), s_before.data());
    nn::gemv_t(nn::at(params_, att_w_), A, S, dq.data(), ds_prev.data());
    ds_next = ds_prev;
  }

  // Initial state s0 = tanh(W mean(h) + b).
  {
    std::vector<double> mean(W, 0.0), dpre(S), dmean(W, 0.0);
    for (const auto& row : h.rows)
      for (std::size_t k = 0; k < W; ++k) mean[k] += row[k] / static_cast<double>(I);
    for (std::size_t k = 0; k < S; ++k) dpre[k] = ds_next[k] * (1.0 - tr.s0[k] * tr.s0[k]);
    nn::outer(nn::at(g, init_w_), S, W, dpre.data(), mean.data());
    double* gb = nn::at(g, init_b_);
    for (std::size_t k = 0; k < S; ++k) gb[k] += dpre[k];
    nn::gemv_t(nn::at(params_, init_w_), S, W, dpre.data(), dmean.data());
    for (std::size_t j = 0; j < I; ++j)
      for (std::size_t k = 0; k < W; ++k) dann[j][k] += dmean[k] / static_cast<double>(I);
  }
  for (std::size_t j = 0; j < I; ++j) {
    nn::outer(nn::at(g, att_u_), A, W, dkeys[j].data(), h.rows[j].data());
    nn::gemv_t(nn::at(params_, att_u_), A, W, dkeys[j].data(), dann[j].data());
  }

  // Encoder, both directions.
  const std::size_t D = E + dense_;
  std::vector<std::vector<double>> dx(I, std::vector<double>(D, 0.0));
  std::vector<double> carry(H, 0.0), dh(H), dprev(H);
  for (std::size_t i = I; i-- > 0;) {
    for (std::size_t k = 0; k < H; ++k) dh[k] = dann[i][k] + carry[k];
    std::fill(dprev.begin(), dprev.end(), 0.0);
    gru_backward(fwd_, tr.fwd[i], dh.data(), dx[i].data(), dprev.data(), g);
    carry = dprev;
  }
  std::fill(carry.begin(), carry.end(), 0.0);
  for (std::size_t i = 0; i < I; ++i) {
    for (std::size_t k = 0; k < H; ++k) dh[k] = dann[i][H + k] + carry[k];
    std::fill(dprev.begin(), dprev.end(), 0.0);
    gru_backward(bwd_, tr.bwd[i], dh.data(), dx[i].data(), dprev.data(), g);
    carry = dprev;
  }
  for (std::size_t i = 0; i < I; ++i) {
    double* gw = nn::at(g, word_emb_) + x[i].word * E;
    for (std::size_t k = 0; k < E; ++k) gw[k] += dx[i][k];
    if (x[i].features.empty()) continue;
    const double scale = 1.0 / static_cast<double>(x[i].features.size());
    for (auto f : x[i].features) {
      double* gf = nn::at(g, feat_emb_) + f * E;
      for (std::size_t k = 0; k < E; ++k) gf[k] += scale * dx[i][k];
    }
  }
  return loss;
}

double EdaModel::loss(const Dataset& batch, std::vector<double>* grad) const {
  if (grad) grad->assign(params_.size(), 0.0);
  double total = 0.0;
  std::size_t words = 0;
  for (const auto& u : batch.utterances) {
    total += loss_sum(u, grad);
    words += u.tokens.size();
  }
  if (words == 0) return 0.0;
  if (grad)
    for (auto& x : *grad) x /= static_cast<double>(words);
  return total / static_cast<double>(words);
}

void EdaModel::write(std::ostream& out) const {
  out << kMagic << ' ' << kVersion << '\n';
  out << "dims embed " << dims_.embed << " hidden " << dims_.hidden << " decoder " << dims_.decoder
      << " attention " << dims_.attention << " label_embed " << dims_.label_embed << " aligned "
      << (dims_.aligned_input ? 1 : 0) << '\n';
  out << "spec " << spec_.to_string() << " bins " << spec_.bins << '\n';
  auto list = [&](const char* name, const std::vector<std::string>& items) {
    out << name << ' ' << items.size() << '\n';
    for (const auto& s : items) out << s << '\n';
  };
  list("labels", labels_);
  list("vocab", vocab_);
  list("features", features_);
  out << "params " << params_.size() << '\n';
  nn::write_values(out, params_);
}

EdaModel EdaModel::read(std::istream& in) {
  nn::expect_token(in, kMagic);
  if (nn::read_size(in) != kVersion) throw FormatError("unsupported EDA model version");
  EdaModel m;
  nn::expect_token(in, "dims");
  for (auto [name, field] : {std::pair{"embed", &m.dims_.embed}, {"hidden", &m.dims_.hidden},
                             {"decoder", &m.dims_.decoder}, {"attention", &m.dims_.attention},
                             {"label_embed", &m.dims_.label_embed}}) {
    nn::expect_token(in, name);
    *field = nn::read_size(in);
  }
  nn::expect_token(in, "aligned");
  m.dims_.aligned_input = nn::read_size(in) != 0;
  nn::expect_token(in, "spec");
  const auto families = nn::read_token(in);
  nn::expect_token(in, "bins");
  m.spec_ = FeatureVectorSpec::parse(families, nn::read_size(in));
  auto list = [&](const char* name) {
    nn::expect_token(in, name);
    std::vector<std::string> items(nn::read_size(in));
    for (auto& s : items) s = nn::read_token(in);
    return items;
  };
  m.labels_ = list("labels");
  m.vocab_ = list("vocab");
  m.features_ = list("features");
  if (m.labels_.empty()) throw FormatError("EDA model has no labels");
  m.make_layout();
  m.index();
  nn::expect_token(in, "params");
  if (nn::read_size(in) != m.params_.size()) throw FormatError("EDA parameter count does not match the header");
  m.params_ = nn::read_values(in, m.params_.size());
  return m;
}

// ---------------------------------------------------------------------------
// Training

void continue_training(EdaModel& model, const Dataset& train, const EdaConfig& cfg,
                       std::vector<double>* epoch_losses) {
  if (train.utterances.empty()) throw TrainingError("EDA training set is empty");
  if (cfg.batch < 1) throw ConfigError("EDA batch size must be at least 1");
  if (!(cfg.lr >= 0.0) || !(cfg.clip >= 0.0)) throw ConfigError("EDA learning rate and clip must be non-negative");
  const std::size_t n = train.utterances.size(), P = model.params().size();
  std::size_t words = 0;
  for (const auto& u : train.utterances) words += u.tokens.size();
  if (words == 0) throw TrainingError("EDA training set has no words");

  nn::Adam adam(P);
  Rng rng(derive_seed(cfg.seed, "eda-shuffle"));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<double>> shard_grad(kShards, std::vector<double>(P));
  std::vector<double> shard_loss(kShards), grad(P);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch) {
      const std::size_t end = std::min(n, start + cfg.batch), size = end - start;
      std::size_t batch_words = 0;
      for (std::size_t i = start; i < end; ++i) batch_words += train.utterances[order[i]].tokens.size();
      if (batch_words == 0) continue;
      const std::size_t shards = std::min(kShards, size);
      parallel_for(shards, cfg.jobs, [&](std::size_t s) {
        std::fill(shard_grad[s].begin(), shard_grad[s].end(), 0.0);
        shard_loss[s] = 0.0;
        for (std::size_t i = start + s * size / shards; i < start + (s + 1) * size / shards; ++i)
          shard_loss[s] += model.loss_sum(train.utterances[order[i]], &shard_grad[s]);
      });
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t s = 0; s < shards; ++s) {
        nn::add_scaled(grad, shard_grad[s], 1.0 / static_cast<double>(batch_words));
        epoch_loss += shard_loss[s];
      }
      const double norm = nn::l2_norm(grad);
      if (cfg.clip > 0.0 && norm > cfg.clip)
        for (auto& x : grad) x *= cfg.clip / norm;
      adam.step(model.params(), grad, cfg.lr);
    }
    if (!nn::all_finite(model.params())) throw TrainingError("EDA training diverged; lower the learning rate");
    if (epoch_losses) epoch_losses->push_back(epoch_loss / static_cast<double>(words));
  }
}

EdaModel train_eda(const Dataset& train, const EdaConfig& cfg, std::vector<double>* epoch_losses) {
  if (train.utterances.empty()) throw TrainingError("EDA training set is empty");
  std::map<std::string, std::size_t> words, keys;
  for (const auto& u : train.utterances)
    for (const auto& t : u.tokens) {
      if (cfg.spec.has(FeatureFamily::surface)) ++words[text::lowercase(t.surface)];
      for (const auto& k : feature_keys_of(t, u, cfg.spec)) ++keys[k];
    }
  auto frequent = [&](const std::map<std::string, std::size_t>& counts) {
    std::vector<std::string> out;
    for (const auto& [w, c] : counts)
      if (c >= cfg.min_count && w != EdaModel::kUnknown) out.push_back(w);
    return out;
  };
  EdaModel model(cfg.labels.empty() ? crf_label_inventory(train) : cfg.labels, frequent(words), frequent(keys),
                 cfg.dims, cfg.spec, cfg.seed);
  continue_training(model, train, cfg, epoch_losses);
  return model;
}

TaggerOutput tag(const EdaModel& model, const Utterance& utt) {
  TaggerOutput out;
  out.id = utt.id;
  for (auto y : model.decode(model.encode(utt)).labels) out.labels.push_back(model.labels()[y]);
  return out;
}

std::vector<TaggerOutput> predict_eda(const EdaModel& model, const Dataset& data, std::size_t jobs) {
  std::vector<TaggerOutput> out(data.utterances.size());
  parallel_for(out.size(), jobs, [&](std::size_t i) { out[i] = tag(model, data.utterances[i]); });
  return out;
}

void save_eda(const std::string& path, const EdaModel& model) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write EDA model: " + path);
  model.write(out);
}

EdaModel load_eda(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open EDA model: " + path);
  return EdaModel::read(in);
}

}  // namespace slu
