// SPDX-License-Identifier: Apache-2.0
#include "slu/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "slu/error.hpp"
#include "slu/parallel.hpp"
#include "slu/rng.hpp"
#include "slu/text.hpp"

namespace slu {

namespace {
constexpr const char* kMagic = "slu-msmlp";
constexpr int kVersion = 1;
constexpr std::size_t kShards = 8;
}  // namespace

double correct_probability(double correct_score, double error_score) {
  const double p = nn::sigmoid(correct_score - error_score);
  return std::clamp(p, kConfidenceFloor, 1.0 - kConfidenceFloor);
}

// ---------------------------------------------------------------------------
// BackoffTable

void BackoffTable::add_sentence(const std::vector<std::string>& words) {
  std::string prev = kStart;
  for (const auto& w : words) {
    auto lw = text::lowercase(w);
    unigrams_.insert(lw);
    bigrams_.emplace(prev, lw);
    prev = std::move(lw);
  }
}

BackoffTable BackoffTable::from_references(const Dataset& data) {
  BackoffTable t;
  for (const auto& u : data.utterances) {
    if (u.reference_tokens) {
      std::vector<std::string> words;
      for (const auto& tok : *u.reference_tokens) words.push_back(tok.surface);
      t.add_sentence(words);
    } else {
      t.add_sentence(u.words());
    }
  }
  return t;
}

Backoff BackoffTable::lookup(const std::string& previous, const std::string& word) const {
  const auto lw = text::lowercase(word);
  if (!unigrams_.count(lw)) return Backoff::unknown;
  const auto lp = previous == kStart ? previous : text::lowercase(previous);
  return bigrams_.count({lp, lw}) ? Backoff::full : Backoff::backoff;
}

void BackoffTable::write(std::ostream& out) const {
  out << "unigrams " << unigrams_.size() << '\n';
  for (const auto& w : unigrams_) out << w << '\n';
  out << "bigrams " << bigrams_.size() << '\n';
  for (const auto& [a, b] : bigrams_) out << a << ' ' << b << '\n';
}

BackoffTable BackoffTable::read(std::istream& in) {
  BackoffTable t;
  nn::expect_token(in, "unigrams");
  for (std::size_t i = 0, n = nn::read_size(in); i < n; ++i) t.unigrams_.insert(nn::read_token(in));
  nn::expect_token(in, "bigrams");
  for (std::size_t i = 0, n = nn::read_size(in); i < n; ++i) {
    auto a = nn::read_token(in);
    auto b = nn::read_token(in);
    t.bigrams_.emplace(std::move(a), std::move(b));
  }
  return t;
}

// ---------------------------------------------------------------------------
// MsMlpModel

struct MsMlpModel::Trace {
  std::vector<double> concat;  // stream projections, concatenated
  std::vector<double> merge;
  std::vector<double> hidden;
  std::array<double, kOutputs> out{};
};

MsMlpModel::MsMlpModel(std::vector<std::size_t> stream_dims, const MsMlpConfig& cfg)
    : stream_dims_(std::move(stream_dims)),
      stream_width_(cfg.stream_width),
      merge_width_(cfg.merge_width),
      hidden_width_(cfg.hidden_width) {
  if (stream_dims_.empty()) throw ConfigError("MS-MLP needs at least one stream");
  if (stream_width_ < 1 || merge_width_ < 1 || hidden_width_ < 1)
    throw ConfigError("MS-MLP layer widths must be positive");
  make_layout();
  Rng rng(derive_seed(cfg.seed, "msmlp-init"));
  for (const auto& b : stream_w_) nn::glorot(params_, b, rng);
  nn::glorot(params_, merge_w_, rng);
  nn::glorot(params_, hidden_w_, rng);
  nn::glorot(params_, out_w_, rng);
}

void MsMlpModel::make_layout() {
  nn::Layout layout;
  stream_w_.clear();
  stream_b_.clear();
  for (std::size_t d : stream_dims_) {
    if (d < 1) throw ConfigError("MS-MLP stream dimensions must be positive");
    stream_w_.push_back(layout.add(stream_width_, d));
    stream_b_.push_back(layout.add(stream_width_));
  }
  merge_w_ = layout.add(merge_width_, stream_width_ * stream_dims_.size());
  merge_b_ = layout.add(merge_width_);
  hidden_w_ = layout.add(hidden_width_, merge_width_);
  hidden_b_ = layout.add(hidden_width_);
  out_w_ = layout.add(kOutputs, hidden_width_);
  out_b_ = layout.add(kOutputs);
  params_.assign(layout.size(), 0.0);
}

void MsMlpModel::forward(const StreamInput& x, Trace& t) const {
  if (x.size() != stream_dims_.size()) throw PreconditionError("MS-MLP input has the wrong number of streams");
  const std::size_t S = stream_dims_.size();
  t.concat.assign(S * stream_width_, 0.0);
  for (std::size_t s = 0; s < S; ++s) {
    if (x[s].size() != stream_dims_[s]) throw PreconditionError("MS-MLP stream has the wrong dimension");
    double* p = t.concat.data() + s * stream_width_;
    nn::gemv(nn::at(params_, stream_w_[s]), stream_width_, stream_dims_[s], x[s].data(), p);
    const double* b = nn::at(params_, stream_b_[s]);
    for (std::size_t i = 0; i < stream_width_; ++i) p[i] = std::tanh(p[i] + b[i]);
  }
  t.merge.assign(merge_width_, 0.0);
  nn::gemv(nn::at(params_, merge_w_), merge_width_, t.concat.size(), t.concat.data(), t.merge.data());
  const double* mb = nn::at(params_, merge_b_);
  for (std::size_t i = 0; i < merge_width_; ++i) t.merge[i] = std::tanh(t.merge[i] + mb[i]);
  t.hidden.assign(hidden_width_, 0.0);
  nn::gemv(nn::at(params_, hidden_w_), hidden_width_, merge_width_, t.merge.data(), t.hidden.data());
  const double* hb = nn::at(params_, hidden_b_);
  for (std::size_t i = 0; i < hidden_width_; ++i) t.hidden[i] = std::tanh(t.hidden[i] + hb[i]);
  nn::gemv(nn::at(params_, out_w_), kOutputs, hidden_width_, t.hidden.data(), t.out.data());
  const double* ob = nn::at(params_, out_b_);
  for (std::size_t i = 0; i < kOutputs; ++i) t.out[i] += ob[i];
}

std::array<double, MsMlpModel::kOutputs> MsMlpModel::scores(const StreamInput& x) const {
  Trace t;
  forward(x, t);
  return t.out;
}

double MsMlpModel::confidence(const StreamInput& x) const {
  const auto s = scores(x);
  return correct_probability(s[0], s[1]);
}

double MsMlpModel::loss_sum(const std::vector<StreamInput>& inputs, const std::vector<int>& targets,
                            std::size_t begin, std::size_t end, std::vector<double>* grad) const {
  Trace t;
  double total = 0.0;
  std::vector<double> dconcat, dmerge(merge_width_), dhidden(hidden_width_);
  for (std::size_t n = begin; n < end; ++n) {
    const int y = targets[n];
    if (y != 0 && y != 1) throw PreconditionError("MS-MLP targets must be 0 (Correct) or 1 (Error)");
    forward(inputs[n], t);
    const double lse = nn::log_sum_exp(t.out.data(), kOutputs);
    total += lse - t.out[static_cast<std::size_t>(y)];
    if (!grad) continue;
    auto& g = *grad;
    std::array<double, kOutputs> dout;
    for (std::size_t k = 0; k < kOutputs; ++k)
      dout[k] = std::exp(t.out[k] - lse) - (static_cast<int>(k) == y ? 1.0 : 0.0);

    nn::outer(g.data() + out_w_.offset, kOutputs, hidden_width_, dout.data(), t.hidden.data());
    for (std::size_t k = 0; k < kOutputs; ++k) g[out_b_.offset + k] += dout[k];
    std::fill(dhidden.begin(), dhidden.end(), 0.0);
    nn::gemv_t(nn::at(params_, out_w_), kOutputs, hidden_width_, dout.data(), dhidden.data());
    for (std::size_t i = 0; i < hidden_width_; ++i) dhidden[i] *= 1.0 - t.hidden[i] * t.hidden[i];

    nn::outer(g.data() + hidden_w_.offset, hidden_width_, merge_width_, dhidden.data(), t.merge.data());
    for (std::size_t i = 0; i < hidden_width_; ++i) g[hidden_b_.offset + i] += dhidden[i];
    std::fill(dmerge.begin(), dmerge.end(), 0.0);
    nn::gemv_t(nn::at(params_, hidden_w_), hidden_width_, merge_width_, dhidden.data(), dmerge.data());
    for (std::size_t i = 0; i < merge_width_; ++i) dmerge[i] *= 1.0 - t.merge[i] * t.merge[i];

    nn::outer(g.data() + merge_w_.offset, merge_width_, t.concat.size(), dmerge.data(), t.concat.data());
    for (std::size_t i = 0; i < merge_width_; ++i) g[merge_b_.offset + i] += dmerge[i];
    dconcat.assign(t.concat.size(), 0.0);
    nn::gemv_t(nn::at(params_, merge_w_), merge_width_, t.concat.size(), dmerge.data(), dconcat.data());

    for (std::size_t s = 0; s < stream_dims_.size(); ++s) {
      double* dp = dconcat.data() + s * stream_width_;
      const double* p = t.concat.data() + s * stream_width_;
      for (std::size_t i = 0; i < stream_width_; ++i) dp[i] *= 1.0 - p[i] * p[i];
      nn::outer(g.data() + stream_w_[s].offset, stream_width_, stream_dims_[s], dp, inputs[n][s].data());
      for (std::size_t i = 0; i < stream_width_; ++i) g[stream_b_[s].offset + i] += dp[i];
    }
  }
  return total;
}

double MsMlpModel::loss(const std::vector<StreamInput>& inputs, const std::vector<int>& targets,
                        std::vector<double>* grad) const {
  if (inputs.size() != targets.size()) throw PreconditionError("MS-MLP inputs and targets differ in length");
  if (inputs.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(inputs.size());
  if (!grad) return loss_sum(inputs, targets, 0, inputs.size(), nullptr) * scale;
  std::vector<double> g(params_.size(), 0.0);
  const double total = loss_sum(inputs, targets, 0, inputs.size(), &g);
  nn::add_scaled(*grad, g, scale);
  return total * scale;
}

void MsMlpModel::write(std::ostream& out) const {
  out << kMagic << ' ' << kVersion << '\n';
  const auto& names = ConfidenceFeaturizer::stream_names();
  out << "streams " << stream_dims_.size() << '\n';
  for (std::size_t s = 0; s < stream_dims_.size(); ++s)
    out << (s < names.size() && stream_dims_.size() == names.size() ? names[s] : text::format("stream%zu", s))
        << ' ' << stream_dims_[s] << '\n';
  out << "widths stream " << stream_width_ << " merge " << merge_width_ << " hidden " << hidden_width_
      << " outputs " << kOutputs << '\n';
  out << "params " << params_.size() << '\n';
  nn::write_values(out, params_);
}

MsMlpModel MsMlpModel::read(std::istream& in) {
  nn::expect_token(in, kMagic);
  if (nn::read_size(in) != kVersion) throw FormatError("unsupported MS-MLP model version");
  MsMlpModel m;
  nn::expect_token(in, "streams");
  const std::size_t n = nn::read_size(in);
  for (std::size_t s = 0; s < n; ++s) {
    nn::read_token(in);
    m.stream_dims_.push_back(nn::read_size(in));
  }
  nn::expect_token(in, "widths");
  nn::expect_token(in, "stream");
  m.stream_width_ = nn::read_size(in);
  nn::expect_token(in, "merge");
  m.merge_width_ = nn::read_size(in);
  nn::expect_token(in, "hidden");
  m.hidden_width_ = nn::read_size(in);
  nn::expect_token(in, "outputs");
  if (nn::read_size(in) != kOutputs) throw FormatError("MS-MLP output layer must have exactly 2 units");
  if (n == 0 || m.stream_width_ == 0 || m.merge_width_ == 0 || m.hidden_width_ == 0)
    throw FormatError("MS-MLP header declares an empty layer");
  m.make_layout();
  nn::expect_token(in, "params");
  if (nn::read_size(in) != m.params_.size()) throw FormatError("MS-MLP parameter count mismatch");
  m.params_ = nn::read_values(in, m.params_.size());
  return m;
}

MsMlpModel train_msmlp_streams(const std::vector<StreamInput>& inputs, const std::vector<int>& targets,
                               std::vector<std::size_t> stream_dims, const MsMlpConfig& cfg,
                               std::vector<double>* epoch_losses) {
  if (inputs.empty()) throw TrainingError("MS-MLP training set is empty");
  if (inputs.size() != targets.size()) throw PreconditionError("MS-MLP inputs and targets differ in length");
  if (cfg.batch < 1) throw ConfigError("MS-MLP batch size must be at least 1");
  if (!(cfg.lr >= 0.0)) throw ConfigError("MS-MLP learning rate must be non-negative");
  MsMlpModel model(std::move(stream_dims), cfg);
  Rng rng(derive_seed(cfg.seed, "msmlp-shuffle"));
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<StreamInput> batch_x;
  std::vector<int> batch_y;
  std::vector<std::vector<double>> shard_grad(kShards, std::vector<double>(model.params().size()));
  std::vector<double> shard_loss(kShards);
  std::vector<double> grad(model.params().size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const std::size_t size = end - start;
      batch_x.clear();
      batch_y.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch_x.push_back(inputs[order[i]]);
        batch_y.push_back(targets[order[i]]);
      }
      const std::size_t shards = std::min(kShards, size);
      parallel_for(shards, cfg.jobs, [&](std::size_t s) {
        std::fill(shard_grad[s].begin(), shard_grad[s].end(), 0.0);
        shard_loss[s] = model.loss_sum(batch_x, batch_y, s * size / shards, (s + 1) * size / shards, &shard_grad[s]);
      });
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t s = 0; s < shards; ++s) {
        nn::add_scaled(grad, shard_grad[s], 1.0);
        epoch_loss += shard_loss[s];
      }
      nn::add_scaled(model.params(), grad, -cfg.lr / static_cast<double>(size));
    }
    if (!nn::all_finite(model.params())) throw TrainingError("MS-MLP training diverged; lower the learning rate");
    if (epoch_losses) epoch_losses->push_back(epoch_loss / static_cast<double>(inputs.size()));
  }
  return model;
}

// ---------------------------------------------------------------------------
// ConfidenceFeaturizer

const std::vector<std::string>& ConfidenceFeaturizer::stream_names() {
  static const std::vector<std::string> names{"embedding", "length", "backoff", "pos", "deprel", "governor_pos"};
  return names;
}

ConfidenceFeaturizer::ConfidenceFeaturizer(EmbeddingTable fused, BackoffTable backoff, const Dataset& train)
    : fused_(std::move(fused)), backoff_(std::move(backoff)) {
  std::set<std::string> pos, rel;
  for (const auto& u : train.utterances)
    for (const auto& t : u.tokens) {
      pos.insert(t.pos);
      rel.insert(t.deprel);
    }
  pos_.assign(pos.begin(), pos.end());
  deprel_.assign(rel.begin(), rel.end());
  pos_.push_back(kOther);
  deprel_.push_back(kOther);
}

std::size_t ConfidenceFeaturizer::pos_index(const std::string& pos) const {
  auto it = std::lower_bound(pos_.begin(), pos_.end() - 1, pos);
  return (it != pos_.end() - 1 && *it == pos) ? static_cast<std::size_t>(it - pos_.begin()) : pos_.size() - 1;
}

std::size_t ConfidenceFeaturizer::deprel_index(const std::string& rel) const {
  auto it = std::lower_bound(deprel_.begin(), deprel_.end() - 1, rel);
  return (it != deprel_.end() - 1 && *it == rel) ? static_cast<std::size_t>(it - deprel_.begin())
                                                 : deprel_.size() - 1;
}

std::vector<std::size_t> ConfidenceFeaturizer::stream_dims() const {
  return {(2 * kWindow + 1) * fused_.dim(), 1, kBackoffValues, pos_.size(), deprel_.size(), pos_.size() + 1};
}

StreamInput ConfidenceFeaturizer::streams(const Utterance& utt, std::size_t i) const {
  const auto dims = stream_dims();
  StreamInput x;
  x.reserve(dims.size());
  for (std::size_t d : dims) x.emplace_back(d, 0.0);
  const auto& toks = utt.tokens;
  const std::size_t d = fused_.dim();
  for (std::size_t k = 0; k < 2 * kWindow + 1; ++k) {
    const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i + k) - static_cast<std::ptrdiff_t>(kWindow);
    if (j < 0 || j >= static_cast<std::ptrdiff_t>(toks.size())) continue;
    const auto v = fused_.lookup(text::lowercase(toks[static_cast<std::size_t>(j)].surface));
    std::copy(v.begin(), v.end(), x[0].begin() + static_cast<std::ptrdiff_t>(k * d));
  }
  const auto& tok = toks[i];
  x[1][0] = static_cast<double>(text::decode_utf8(tok.surface).size()) / 10.0;
  const std::string prev = i == 0 ? std::string(BackoffTable::kStart) : toks[i - 1].surface;
  x[2][static_cast<std::size_t>(backoff_.lookup(prev, tok.surface))] = 1.0;
  x[3][pos_index(tok.pos)] = 1.0;
  x[4][deprel_index(tok.deprel)] = 1.0;
  if (tok.governor && *tok.governor < toks.size())
    x[5][pos_index(toks[*tok.governor].pos)] = 1.0;
  else
    x[5][pos_.size()] = 1.0;
  return x;
}

void ConfidenceFeaturizer::write(std::ostream& out) const {
  out << "pos " << pos_.size() - 1;
  for (std::size_t i = 0; i + 1 < pos_.size(); ++i) out << ' ' << pos_[i];
  out << "\ndeprel " << deprel_.size() - 1;
  for (std::size_t i = 0; i + 1 < deprel_.size(); ++i) out << ' ' << deprel_[i];
  out << '\n';
  backoff_.write(out);
  out << "embeddings " << fused_.size() << ' ' << fused_.dim() << '\n';
  fused_.write(out);
}

ConfidenceFeaturizer ConfidenceFeaturizer::read(std::istream& in) {
  ConfidenceFeaturizer f;
  nn::expect_token(in, "pos");
  for (std::size_t i = 0, n = nn::read_size(in); i < n; ++i) f.pos_.push_back(nn::read_token(in));
  f.pos_.push_back(kOther);
  nn::expect_token(in, "deprel");
  for (std::size_t i = 0, n = nn::read_size(in); i < n; ++i) f.deprel_.push_back(nn::read_token(in));
  f.deprel_.push_back(kOther);
  if (!std::is_sorted(f.pos_.begin(), f.pos_.end() - 1) || !std::is_sorted(f.deprel_.begin(), f.deprel_.end() - 1))
    throw FormatError("confidence model inventories must be sorted");
  f.backoff_ = BackoffTable::read(in);
  nn::expect_token(in, "embeddings");
  const std::size_t rows = nn::read_size(in);
  const std::size_t dim = nn::read_size(in);
  f.fused_ = EmbeddingTable(dim);
  f.fused_.set_name("fused");
  for (std::size_t r = 0; r < rows; ++r) {
    const auto word = nn::read_token(in);
    f.fused_.set(word, nn::read_values(in, dim));
  }
  return f;
}

// ---------------------------------------------------------------------------
// ConfidenceModel

ConfidenceModel train_msmlp(const Dataset& train, EmbeddingTable fused, BackoffTable backoff, const MsMlpConfig& cfg,
                            std::vector<double>* epoch_losses) {
  ConfidenceModel model;
  model.featurizer = ConfidenceFeaturizer(std::move(fused), std::move(backoff), train);
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  for (std::size_t u = 0; u < train.utterances.size(); ++u) {
    const auto& utt = train.utterances[u];
    for (std::size_t i = 0; i < utt.tokens.size(); ++i) {
      if (!utt.tokens[i].error_flag)
        throw PreconditionError(text::format("utterance %s token %zu has no error flag", utt.id.c_str(), i + 1));
      positions.emplace_back(u, i);
    }
  }
  if (positions.empty()) throw TrainingError("MS-MLP training set has no tokens");
  std::vector<StreamInput> inputs(positions.size());
  std::vector<int> targets(positions.size());
  parallel_for(positions.size(), cfg.jobs, [&](std::size_t n) {
    const auto [u, i] = positions[n];
    const auto& utt = train.utterances[u];
    inputs[n] = model.featurizer.streams(utt, i);
    targets[n] = *utt.tokens[i].error_flag == ErrorFlag::correct ? 0 : 1;
  });
  model.mlp = train_msmlp_streams(inputs, targets, model.featurizer.stream_dims(), cfg, epoch_losses);
  return model;
}

double confidence_of(const ConfidenceModel& model, const Utterance& utt, std::size_t i) {
  return model.mlp.confidence(model.featurizer.streams(utt, i));
}

void attach_confidences(const ConfidenceModel& model, Dataset& data, std::size_t jobs) {
  parallel_for(data.utterances.size(), jobs, [&](std::size_t u) {
    auto& utt = data.utterances[u];
    for (std::size_t i = 0; i < utt.tokens.size(); ++i) utt.tokens[i].mlp_conf = confidence_of(model, utt, i);
  });
}

void write_confidence_model(std::ostream& out, const ConfidenceModel& model) {
  model.mlp.write(out);
  out << "featurizer\n";
  model.featurizer.write(out);
}

void save_confidence_model(const std::string& path, const ConfidenceModel& model) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write confidence model: " + path);
  write_confidence_model(out, model);
}

ConfidenceModel load_confidence_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open confidence model: " + path);
  ConfidenceModel m;
  m.mlp = MsMlpModel::read(in);
  nn::expect_token(in, "featurizer");
  m.featurizer = ConfidenceFeaturizer::read(in);
  if (m.featurizer.stream_dims() != m.mlp.stream_dims())
    throw FormatError("confidence model featurizer and network disagree on stream widths");
  return m;
}

}  // namespace slu
