// SPDX-License-Identifier: Apache-2.0
#include "slu/crf.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "slu/error.hpp"
#include "slu/nn.hpp"
#include "slu/parallel.hpp"
#include "slu/rng.hpp"
#include "slu/text.hpp"

namespace slu {

namespace {

constexpr const char* kMagic = "slu-crf";
constexpr int kVersion = 1;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

enum Field : std::size_t { kW, kLemma, kPos, kCat, kMorph, kSyn, kPap, kConf, kFieldCount };

struct FieldInfo {
  const char* name;
  FeatureFamily family;
};

constexpr std::array<FieldInfo, kFieldCount> kFields{{
    {"w", FeatureFamily::surface},
    {"lemma", FeatureFamily::syntactic},
    {"pos", FeatureFamily::syntactic},
    {"cat", FeatureFamily::sem_categories},
    {"morph", FeatureFamily::morphological},
    {"syn", FeatureFamily::syntactic},
    {"pap", FeatureFamily::pap},
    {"conf", FeatureFamily::mlp_conf},
}};

std::size_t field_id(std::string_view name) {
  for (std::size_t i = 0; i < kFieldCount; ++i)
    if (name == kFields[i].name) return i;
  return kFieldCount;
}

constexpr std::array<const char*, 9> kMorphSlots{"pre1", "pre2", "pre3", "pre4", "suf1",
                                                 "suf2", "suf3", "suf4", "cap"};

using TokenFields = std::array<std::vector<std::string>, kFieldCount>;

TokenFields token_fields(const Token& token, const Utterance& utt, const FeatureVectorSpec& spec) {
  TokenFields f;
  std::vector<std::string> cats;
  std::array<std::string, kMorphSlots.size()> morph;
  for (std::size_t i = 0; i < morph.size(); ++i) morph[i] = std::string(kMorphSlots[i]) + ":_";
  for (const auto& feat : token_features(token, utt, spec)) {
    const auto& fam = feat.family;
    if (fam == "w") f[kW].push_back(feat.value);
    else if (fam == "lemma") f[kLemma].push_back(feat.value);
    else if (fam == "pos") f[kPos].push_back(feat.value);
    else if (fam == "gov" || fam == "dep") f[kSyn].push_back(feat.key());
    else if (fam == "cat") cats.push_back(feat.value);
    else if (fam == "pap") f[kPap].push_back(feat.value);
    else if (fam == "conf") f[kConf].push_back(feat.value);
    else
      for (std::size_t i = 0; i < morph.size(); ++i)
        if (fam == kMorphSlots[i]) morph[i] = feat.key();
  }
  if (spec.has(FeatureFamily::sem_categories)) {
    std::sort(cats.begin(), cats.end());
    f[kCat].push_back(cats.empty() ? std::string(kMissing) : text::join(cats, "+"));
  }
  if (spec.has(FeatureFamily::morphological)) f[kMorph].assign(morph.begin(), morph.end());
  return f;
}

}  // namespace

// ---------------------------------------------------------------------------
// Templates

std::string CrfTemplate::name() const {
  if (items.empty()) return "bias";
  std::vector<std::string> parts;
  for (const auto& it : items) parts.push_back(text::format("%s[%d]", it.field.c_str(), it.offset));
  return text::join(parts, "|");
}

TemplateSet TemplateSet::parse(std::string_view src) {
  TemplateSet set;
  std::size_t lineno = 0;
  for (const auto& raw : text::split(src, '\n')) {
    ++lineno;
    const auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto fail = [&](const std::string& why) {
      throw ConfigError(text::format("template line %zu: %s", lineno, why.c_str()));
    };
    if (line == "B:y[-1]/y[0]") {
      set.transitions = true;
      continue;
    }
    if (!text::starts_with(line, "U:")) fail("expected 'U:' or 'B:y[-1]/y[0]'");
    const auto body = line.substr(2);
    CrfTemplate tpl;
    if (body != "bias") {
      for (const auto& item : text::split(body, '/')) {
        const auto open = item.find('[');
        if (open == std::string::npos || item.back() != ']') fail("malformed item '" + item + "'");
        TemplateItem ti;
        ti.field = item.substr(0, open);
        if (field_id(ti.field) == kFieldCount) fail("unknown field '" + ti.field + "'");
        const auto num = item.substr(open + 1, item.size() - open - 2);
        try {
          std::size_t used = 0;
          ti.offset = std::stoi(num, &used);
          if (used != num.size()) throw std::invalid_argument(num);
        } catch (const std::exception&) {
          fail("bad offset '" + num + "'");
        }
        if (ti.offset < -kWindow || ti.offset > kWindow) fail("offset outside [-2, 2]");
        tpl.items.push_back(ti);
      }
    }
    set.observations.push_back(tpl);
  }
  return set;
}

TemplateSet TemplateSet::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open template file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

TemplateSet TemplateSet::default_set() {
  return parse(
      "U:bias\n"
      "U:w[-1]\nU:w[0]\nU:w[1]\nU:w[-1]/w[0]\nU:w[0]/w[1]\n"
      "U:pos[-1]\nU:pos[0]\nU:pos[1]\nU:pos[-1]/pos[0]\nU:pos[0]/pos[1]\n"
      "U:cat[-2]\nU:cat[-1]\nU:cat[0]\nU:cat[1]\nU:cat[2]\n"
      "U:lemma[0]\nU:morph[0]\nU:syn[0]\nU:pap[0]\nU:conf[0]\n"
      "U:pap[0]/cat[0]\nU:conf[0]/cat[0]\nU:pap[0]/pos[0]\nU:conf[0]/pos[0]\n"
      "B:y[-1]/y[0]\n");
}

std::string TemplateSet::to_string() const {
  std::string out;
  for (const auto& t : observations) {
    out += "U:";
    if (t.items.empty()) {
      out += "bias";
    } else {
      std::vector<std::string> parts;
      for (const auto& it : t.items) parts.push_back(text::format("%s[%d]", it.field.c_str(), it.offset));
      out += text::join(parts, "/");
    }
    out += '\n';
  }
  if (transitions) out += "B:y[-1]/y[0]\n";
  return out;
}

std::vector<std::vector<std::string>> expand_templates(const Utterance& utt, const TemplateSet& templates,
                                                       const FeatureVectorSpec& spec) {
  const std::size_t n = utt.tokens.size();
  std::vector<TokenFields> fields;
  fields.reserve(n);
  for (const auto& t : utt.tokens) fields.push_back(token_fields(t, utt, spec));

  std::vector<const CrfTemplate*> active;
  for (const auto& t : templates.observations) {
    const bool enabled = std::all_of(t.items.begin(), t.items.end(), [&](const TemplateItem& it) {
      return spec.has(kFields[field_id(it.field)].family);
    });
    if (enabled) active.push_back(&t);
  }

  std::vector<std::vector<std::string>> out(n);
  const std::vector<std::string> bos{std::string(kBos)}, eos{std::string(kEos)};
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (const auto* t : active) {
      const auto name = t->name();
      if (t->items.empty()) {
        out[pos].push_back(name);
        continue;
      }
      std::vector<const std::vector<std::string>*> values;
      for (const auto& it : t->items) {
        const auto j = static_cast<std::ptrdiff_t>(pos) + it.offset;
        if (j < 0) values.push_back(&bos);
        else if (j >= static_cast<std::ptrdiff_t>(n)) values.push_back(&eos);
        else values.push_back(&fields[static_cast<std::size_t>(j)][field_id(it.field)]);
      }
      // Cartesian product over multi-valued fields.
      std::vector<std::string> keys{name + "="};
      for (std::size_t k = 0; k < values.size(); ++k) {
        std::vector<std::string> next;
        next.reserve(keys.size() * values[k]->size());
        for (const auto& prefix : keys)
          for (const auto& v : *values[k]) next.push_back(prefix + (k ? "|" : "") + v);
        keys = std::move(next);
      }
      for (auto& key : keys) out[pos].push_back(std::move(key));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lattice inference

CrfScores::CrfScores(std::size_t len, std::size_t nlabels)
    : length(len),
      labels(nlabels),
      emission(len * nlabels, 0.0),
      transition(nlabels * nlabels, 0.0),
      start(nlabels, 0.0) {}

double CrfScores::sequence_score(const std::vector<std::size_t>& y) const {
  if (y.empty()) return 0.0;
  double s = start[y[0]];
  for (std::size_t t = 0; t < y.size(); ++t) {
    s += emit(t, y[t]);
    if (t > 0) s += trans(y[t - 1], y[t]);
  }
  return s;
}

namespace {

// exp(transition - max) and the max, so each step needs only O(L) exps.
struct ExpTransitions {
  std::vector<double> e;
  double max = 0.0;
  explicit ExpTransitions(const CrfScores& s) : e(s.transition.size()) {
    max = s.transition.empty() ? 0.0 : *std::max_element(s.transition.begin(), s.transition.end());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = std::exp(s.transition[i] - max);
  }
};

double max_of(const double* v, std::size_t n) {
  double m = kNegInf;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  return m;
}

}  // namespace

ForwardBackward forward_backward(const CrfScores& s) {
  const std::size_t n = s.length, L = s.labels;
  ForwardBackward fb;
  fb.alpha.assign(n * L, kNegInf);
  fb.beta.assign(n * L, 0.0);
  if (n == 0 || L == 0) return fb;
  const ExpTransitions et(s);
  std::vector<double> p(L), q(L);

  for (std::size_t y = 0; y < L; ++y) fb.alpha[y] = s.start[y] + s.emit(0, y);
  for (std::size_t t = 1; t < n; ++t) {
    const double* prev = &fb.alpha[(t - 1) * L];
    const double m = max_of(prev, L);
    for (std::size_t a = 0; a < L; ++a) p[a] = std::exp(prev[a] - m);
    std::fill(q.begin(), q.end(), 0.0);
    for (std::size_t a = 0; a < L; ++a) {
      const double pa = p[a];
      const double* row = &et.e[a * L];
      for (std::size_t b = 0; b < L; ++b) q[b] += pa * row[b];
    }
    for (std::size_t b = 0; b < L; ++b) fb.alpha[t * L + b] = s.emit(t, b) + m + et.max + std::log(q[b]);
  }
  fb.log_z_forward = nn::log_sum_exp(&fb.alpha[(n - 1) * L], L);

  for (std::size_t t = n - 1; t-- > 0;) {
    for (std::size_t b = 0; b < L; ++b) q[b] = s.emit(t + 1, b) + fb.beta[(t + 1) * L + b];
    const double m = max_of(q.data(), L);
    for (std::size_t b = 0; b < L; ++b) p[b] = std::exp(q[b] - m);
    for (std::size_t a = 0; a < L; ++a) {
      fb.beta[t * L + a] = m + et.max + std::log(nn::dot(&et.e[a * L], p.data(), L));
    }
  }
  for (std::size_t y = 0; y < L; ++y) q[y] = s.start[y] + s.emit(0, y) + fb.beta[y];
  fb.log_z_backward = nn::log_sum_exp(q.data(), L);
  return fb;
}

double log_partition(const CrfScores& s) { return forward_backward(s).log_z_forward; }

std::vector<std::size_t> viterbi_path(const CrfScores& s) {
  const std::size_t n = s.length, L = s.labels;
  if (n == 0) return {};
  std::vector<double> delta(n * L);
  std::vector<std::size_t> back(n * L, 0);
  for (std::size_t y = 0; y < L; ++y) delta[y] = s.start[y] + s.emit(0, y);
  for (std::size_t t = 1; t < n; ++t)
    for (std::size_t b = 0; b < L; ++b) {
      std::size_t best = 0;
      double best_score = delta[(t - 1) * L] + s.trans(0, b);
      for (std::size_t a = 1; a < L; ++a) {
        const double v = delta[(t - 1) * L + a] + s.trans(a, b);
        if (v > best_score) {
          best_score = v;
          best = a;
        }
      }
      delta[t * L + b] = best_score + s.emit(t, b);
      back[t * L + b] = best;
    }
  std::vector<std::size_t> path(n);
  std::size_t y = 0;
  for (std::size_t b = 1; b < L; ++b)
    if (delta[(n - 1) * L + b] > delta[(n - 1) * L + y]) y = b;
  for (std::size_t t = n; t-- > 0;) {
    path[t] = y;
    y = back[t * L + y];
  }
  return path;
}

std::vector<double> node_marginals(const CrfScores& s, const ForwardBackward& fb) {
  std::vector<double> m(s.length * s.labels);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::exp(fb.alpha[i] + fb.beta[i] - fb.log_z_forward);
  return m;
}

std::vector<double> pair_marginal_sums(const CrfScores& s, const ForwardBackward& fb) {
  const std::size_t n = s.length, L = s.labels;
  std::vector<double> out(L * L, 0.0);
  if (n < 2) return out;
  const ExpTransitions et(s);
  std::vector<double> a(L), b(L), q(L);
  for (std::size_t t = 1; t < n; ++t) {
    const double* prev = &fb.alpha[(t - 1) * L];
    const double m1 = max_of(prev, L);
    for (std::size_t y = 0; y < L; ++y) q[y] = s.emit(t, y) + fb.beta[t * L + y];
    const double m2 = max_of(q.data(), L);
    for (std::size_t y = 0; y < L; ++y) {
      a[y] = std::exp(prev[y] - m1);
      b[y] = std::exp(q[y] - m2);
    }
    const double c = std::exp(m1 + m2 + et.max - fb.log_z_forward);
    for (std::size_t x = 0; x < L; ++x) {
      const double ax = a[x] * c;
      const double* row = &et.e[x * L];
      double* o = &out[x * L];
      for (std::size_t y = 0; y < L; ++y) o[y] += ax * row[y] * b[y];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model

CrfModel::CrfModel(std::vector<std::string> labels, TemplateSet templates, FeatureVectorSpec spec, double l2)
    : labels_(std::move(labels)), templates_(std::move(templates)), spec_(spec), l2_(l2) {
  if (labels_.empty()) throw ConfigError("CRF label inventory is empty");
  if (!(l2_ >= 0.0)) throw ConfigError("CRF L2 strength must be non-negative");
  spec_.check();
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (!label_index_.emplace(labels_[i], i).second) throw ConfigError("duplicate CRF label " + labels_[i]);
  weights_.assign(labels_.size() + labels_.size() * labels_.size(), 0.0);
}

std::size_t CrfModel::label_id(std::string_view label) const {
  auto it = label_index_.find(std::string(label));
  return it == label_index_.end() ? npos : it->second;
}

void CrfModel::index_features(const Dataset& data) {
  std::vector<std::string> added;
  for (const auto& u : data.utterances)
    for (const auto& pos : expand_templates(u, templates_, spec_))
      for (const auto& key : pos)
        if (key_index_.emplace(key, static_cast<std::uint32_t>(keys_.size() + added.size())).second)
          added.push_back(key);
  if (added.empty()) return;
  const std::size_t L = labels_.size();
  std::vector<double> tail(weights_.begin() + static_cast<std::ptrdiff_t>(start_offset()), weights_.end());
  keys_.insert(keys_.end(), added.begin(), added.end());
  weights_.resize(keys_.size() * L);
  std::fill(weights_.begin() + static_cast<std::ptrdiff_t>((keys_.size() - added.size()) * L), weights_.end(), 0.0);
  weights_.insert(weights_.end(), tail.begin(), tail.end());
}

std::vector<std::vector<std::uint32_t>> CrfModel::feature_ids(const Utterance& utt) const {
  const auto keys = expand_templates(utt, templates_, spec_);
  std::vector<std::vector<std::uint32_t>> ids(keys.size());
  for (std::size_t t = 0; t < keys.size(); ++t)
    for (const auto& k : keys[t]) {
      auto it = key_index_.find(k);
      if (it != key_index_.end()) ids[t].push_back(it->second);
    }
  return ids;
}

namespace {

CrfScores scores_scaled(const CrfModel& m, const std::vector<std::vector<std::uint32_t>>& ids, double scale) {
  const std::size_t L = m.labels().size();
  CrfScores s(ids.size(), L);
  const auto& w = m.weights();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    double* e = &s.emission[t * L];
    for (auto f : ids[t]) {
      const double* row = &w[static_cast<std::size_t>(f) * L];
      for (std::size_t y = 0; y < L; ++y) e[y] += row[y];
    }
    for (std::size_t y = 0; y < L; ++y) e[y] *= scale;
  }
  if (m.templates().transitions) {
    for (std::size_t y = 0; y < L; ++y) s.start[y] = scale * w[m.start_offset() + y];
    for (std::size_t i = 0; i < L * L; ++i) s.transition[i] = scale * w[m.transition_offset() + i];
  }
  return s;
}

std::vector<std::size_t> gold_ids(const CrfModel& m, const Utterance& u) {
  std::vector<std::size_t> y;
  y.reserve(u.tokens.size());
  for (const auto& t : u.tokens) {
    const auto id = m.label_id(t.label);
    if (id == CrfModel::npos)
      throw DataError(text::format("utterance %s: label '%s' is outside the CRF inventory", u.id.c_str(),
                                   t.label.c_str()));
    y.push_back(id);
  }
  return y;
}

// log p(y|x) for one example; adds scale_grad * d log p / d w to grad.
double example_gradient(const CrfModel& m, const std::vector<std::vector<std::uint32_t>>& ids,
                        const std::vector<std::size_t>& y, double weight_scale, double grad_scale,
                        std::vector<double>& grad) {
  if (ids.empty()) return 0.0;
  const std::size_t L = m.labels().size();
  const auto s = scores_scaled(m, ids, weight_scale);
  const auto fb = forward_backward(s);
  const auto marg = node_marginals(s, fb);
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const double* mt = &marg[t * L];
    for (auto f : ids[t]) {
      double* g = &grad[static_cast<std::size_t>(f) * L];
      for (std::size_t k = 0; k < L; ++k) g[k] -= grad_scale * mt[k];
      g[y[t]] += grad_scale;
    }
  }
  if (m.templates().transitions) {
    const std::size_t so = m.start_offset(), to = m.transition_offset();
    for (std::size_t k = 0; k < L; ++k) grad[so + k] -= grad_scale * marg[k];
    grad[so + y[0]] += grad_scale;
    const auto pairs = pair_marginal_sums(s, fb);
    for (std::size_t i = 0; i < L * L; ++i) grad[to + i] -= grad_scale * pairs[i];
    for (std::size_t t = 1; t < y.size(); ++t) grad[to + y[t - 1] * L + y[t]] += grad_scale;
  }
  return s.sequence_score(y) - fb.log_z_forward;
}

double squared_norm(const std::vector<double>& w) {
  double s = 0.0;
  for (double x : w) s += x * x;
  return s;
}

}  // namespace

CrfScores CrfModel::scores(const std::vector<std::vector<std::uint32_t>>& ids) const {
  return scores_scaled(*this, ids, 1.0);
}

double log_likelihood_and_gradient(const CrfModel& model, const Dataset& batch, std::vector<double>* grad) {
  std::vector<double> scratch;
  std::vector<double>& g = grad ? *grad : scratch;
  g.assign(model.weights().size(), 0.0);
  double ll = 0.0;
  for (const auto& u : batch.utterances) {
    const auto y = gold_ids(model, u);
    const auto ids = model.feature_ids(u);
    if (grad) {
      ll += example_gradient(model, ids, y, 1.0, 1.0, g);
    } else if (!ids.empty()) {
      const auto s = model.scores(ids);
      ll += s.sequence_score(y) - log_partition(s);
    }
  }
  const auto& w = model.weights();
  if (grad)
    for (std::size_t i = 0; i < w.size(); ++i) g[i] -= model.l2() * w[i];
  return ll - 0.5 * model.l2() * squared_norm(w);
}

std::vector<std::string> crf_label_inventory(const Dataset& data) {
  auto labels = LabelScheme::from_dataset(data).tag_labels();
  bool err_c = false, err_n = false;
  for (const auto& u : data.utterances)
    for (const auto& t : u.tokens) {
      err_c |= t.label == labels::kErrorC;
      err_n |= t.label == labels::kErrorN;
    }
  if (err_c) labels.emplace_back(labels::kErrorC);
  if (err_n) labels.emplace_back(labels::kErrorN);
  return labels;
}

void continue_training(CrfModel& model, const Dataset& train, const CrfConfig& cfg, const Dataset* dev,
                       std::vector<double>* dev_log_likelihood) {
  if (train.utterances.empty()) throw TrainingError("CRF training set is empty");
  if (!(cfg.lr >= 0.0) || !(cfg.lr_decay >= 0.0)) throw ConfigError("CRF learning rate must be non-negative");
  const std::size_t n = train.utterances.size();
  if (cfg.lr * model.l2() / static_cast<double>(n) >= 1.0)
    throw ConfigError("CRF learning rate too large for the L2 strength");

  std::vector<std::vector<std::vector<std::uint32_t>>> ids(n);
  std::vector<std::vector<std::size_t>> gold(n);
  parallel_for(n, cfg.jobs, [&](std::size_t i) {
    gold[i] = gold_ids(model, train.utterances[i]);
    ids[i] = model.feature_ids(train.utterances[i]);
  });

  // Weights are stored as scale * v so the L2 shrinkage of every example
  // costs O(1); only the touched coordinates of v are updated.
  auto& v = model.weights();
  double scale = 1.0;
  const std::size_t L = model.labels().size();
  std::vector<double> grad(v.size(), 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, "crf-shuffle"));
  std::size_t step = 0;
  const double lambda = model.l2() / static_cast<double>(n);
  const std::size_t averaged = std::min(cfg.average_epochs, cfg.epochs);
  std::vector<double> mean(averaged > 1 ? v.size() : 0, 0.0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t i : order) {
      const double eta = cfg.lr / (1.0 + cfg.lr_decay * static_cast<double>(step) / static_cast<double>(n));
      ++step;
      if (ids[i].empty()) continue;
      scale *= 1.0 - eta * lambda;
      // Sparse gradient: touched emission rows plus start/transition blocks.
      const double inv = eta / scale;
      example_gradient(model, ids[i], gold[i], scale, 1.0, grad);
      for (const auto& pos : ids[i])
        for (auto f : pos) {
          double* g = &grad[static_cast<std::size_t>(f) * L];
          double* w = &v[static_cast<std::size_t>(f) * L];
          for (std::size_t k = 0; k < L; ++k) {
            w[k] += inv * g[k];
            g[k] = 0.0;
          }
        }
      if (model.templates().transitions)
        for (std::size_t k = model.start_offset(); k < v.size(); ++k) {
          v[k] += inv * grad[k];
          grad[k] = 0.0;
        }
      if (scale < 1e-9) {
        for (auto& x : v) x *= scale;
        scale = 1.0;
      }
    }
    for (auto& x : v) x *= scale;
    scale = 1.0;
    if (!nn::all_finite(v)) throw TrainingError("CRF training diverged; lower the learning rate");
    if (!mean.empty() && epoch + averaged >= cfg.epochs) {
      nn::add_scaled(mean, v, 1.0 / static_cast<double>(averaged));
      if (epoch + 1 == cfg.epochs) v = mean;
    }
    if (dev && dev_log_likelihood) dev_log_likelihood->push_back(log_likelihood_and_gradient(model, *dev));
  }
}

CrfModel train_crf(const Dataset& train, const TemplateSet& templates, const FeatureVectorSpec& spec,
                   const CrfConfig& cfg, const Dataset* dev, std::vector<double>* dev_log_likelihood) {
  if (train.utterances.empty()) throw TrainingError("CRF training set is empty");
  CrfModel model(cfg.labels.empty() ? crf_label_inventory(train) : cfg.labels, templates, spec, cfg.l2);
  model.index_features(train);
  continue_training(model, train, cfg, dev, dev_log_likelihood);
  return model;
}

TaggerOutput viterbi(const CrfModel& model, const Utterance& utt) {
  TaggerOutput out;
  out.id = utt.id;
  for (auto y : viterbi_path(model.scores(utt))) out.labels.push_back(model.labels()[y]);
  return out;
}

std::vector<std::vector<double>> marginals(const CrfModel& model, const Utterance& utt) {
  const auto s = model.scores(utt);
  const auto m = node_marginals(s, forward_backward(s));
  std::vector<std::vector<double>> out(s.length);
  for (std::size_t t = 0; t < s.length; ++t)
    out[t].assign(m.begin() + static_cast<std::ptrdiff_t>(t * s.labels),
                  m.begin() + static_cast<std::ptrdiff_t>((t + 1) * s.labels));
  return out;
}

std::vector<TaggerOutput> predict_crf(const CrfModel& model, const Dataset& data, std::size_t jobs) {
  std::vector<TaggerOutput> out(data.utterances.size());
  parallel_for(out.size(), jobs, [&](std::size_t i) { out[i] = viterbi(model, data.utterances[i]); });
  return out;
}

void CrfModel::write(std::ostream& out) const {
  out << kMagic << ' ' << kVersion << '\n';
  out << "labels " << labels_.size() << '\n';
  for (const auto& l : labels_) out << l << '\n';
  out << "l2 " << text::exact(l2_) << '\n';
  out << "spec " << spec_.to_string() << " bins " << spec_.bins << '\n';
  const auto tpl = text::split(templates_.to_string(), '\n');
  out << "templates " << (tpl.size() - 1) << '\n';
  for (std::size_t i = 0; i + 1 < tpl.size(); ++i) out << tpl[i] << '\n';
  out << "features " << keys_.size() << '\n';
  for (const auto& k : keys_) out << k << '\n';
  out << "weights " << weights_.size() << '\n';
  nn::write_values(out, weights_);
}

CrfModel CrfModel::read(std::istream& in) {
  nn::expect_token(in, kMagic);
  if (nn::read_size(in) != kVersion) throw FormatError("unsupported CRF model version");
  nn::expect_token(in, "labels");
  std::vector<std::string> labels(nn::read_size(in));
  for (auto& l : labels) l = nn::read_token(in);
  nn::expect_token(in, "l2");
  const double l2 = nn::read_values(in, 1)[0];
  nn::expect_token(in, "spec");
  const auto families = nn::read_token(in);
  nn::expect_token(in, "bins");
  const auto spec = FeatureVectorSpec::parse(families, nn::read_size(in));
  nn::expect_token(in, "templates");
  std::string tpl;
  for (std::size_t i = 0, n = nn::read_size(in); i < n; ++i) tpl += nn::read_token(in) + "\n";
  CrfModel m(std::move(labels), TemplateSet::parse(tpl), spec, l2);
  nn::expect_token(in, "features");
  const std::size_t nf = nn::read_size(in);
  m.keys_.reserve(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    auto key = nn::read_token(in);
    if (!m.key_index_.emplace(key, static_cast<std::uint32_t>(i)).second)
      throw FormatError("duplicate CRF feature key " + key);
    m.keys_.push_back(std::move(key));
  }
  nn::expect_token(in, "weights");
  const std::size_t L = m.labels_.size();
  if (nn::read_size(in) != nf * L + L + L * L) throw FormatError("CRF weight count mismatch");
  m.weights_ = nn::read_values(in, nf * L + L + L * L);
  return m;
}

void save_crf(const std::string& path, const CrfModel& model) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write CRF model: " + path);
  model.write(out);
}

CrfModel load_crf(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open CRF model: " + path);
  return CrfModel::read(in);
}

}  // namespace slu
