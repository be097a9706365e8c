// SPDX-License-Identifier: Apache-2.0
#include "slu/autoencoder.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "slu/error.hpp"
#include "slu/rng.hpp"
#include "slu/text.hpp"

namespace slu {

namespace {
constexpr const char* kMagic = "slu-autoencoder";
constexpr int kVersion = 1;
}  // namespace

AutoencoderModel::AutoencoderModel(std::vector<Source> sources, std::size_t bottleneck, std::uint64_t seed)
    : sources_(std::move(sources)), bottleneck_(bottleneck) {
  if (bottleneck_ < 1) throw ConfigError("autoencoder bottleneck must be at least 1");
  make_layout();
  Rng rng(derive_seed(seed, "autoencoder-init"));
  nn::glorot(params_, enc_w_, rng);
  nn::glorot(params_, dec_w_, rng);
}

void AutoencoderModel::make_layout() {
  input_dim_ = 0;
  for (const auto& s : sources_) input_dim_ += s.dim;
  if (input_dim_ == 0) throw ConfigError("autoencoder needs a non-empty input");
  nn::Layout layout;
  enc_w_ = layout.add(bottleneck_, input_dim_);
  enc_b_ = layout.add(bottleneck_);
  dec_w_ = layout.add(input_dim_, bottleneck_);
  dec_b_ = layout.add(input_dim_);
  params_.assign(layout.size(), 0.0);
}

std::vector<double> AutoencoderModel::encode(const std::vector<double>& x) const {
  std::vector<double> z(bottleneck_);
  nn::gemv(nn::at(params_, enc_w_), bottleneck_, input_dim_, x.data(), z.data());
  const double* b = nn::at(params_, enc_b_);
  for (std::size_t i = 0; i < bottleneck_; ++i) z[i] = std::tanh(z[i] + b[i]);
  return z;
}

std::vector<double> AutoencoderModel::reconstruct(const std::vector<double>& x) const {
  const auto z = encode(x);
  std::vector<double> y(nn::at(params_, dec_b_), nn::at(params_, dec_b_) + input_dim_);
  nn::gemv(nn::at(params_, dec_w_), input_dim_, bottleneck_, z.data(), y.data(), true);
  return y;
}

double AutoencoderModel::loss(const std::vector<std::vector<double>>& inputs, std::vector<double>* grad) const {
  if (inputs.empty()) return 0.0;
  const double scale = 1.0 / static_cast<double>(inputs.size() * input_dim_);
  double total = 0.0;
  std::vector<double> dy(input_dim_), dz(bottleneck_);
  for (const auto& x : inputs) {
    if (x.size() != input_dim_) throw PreconditionError("autoencoder input has the wrong dimension");
    const auto z = encode(x);
    std::vector<double> y(nn::at(params_, dec_b_), nn::at(params_, dec_b_) + input_dim_);
    nn::gemv(nn::at(params_, dec_w_), input_dim_, bottleneck_, z.data(), y.data(), true);
    for (std::size_t k = 0; k < input_dim_; ++k) {
      const double diff = y[k] - x[k];
      total += diff * diff;
      dy[k] = 2.0 * diff * scale;
    }
    if (!grad) continue;
    auto& g = *grad;
    nn::outer(g.data() + dec_w_.offset, input_dim_, bottleneck_, dy.data(), z.data());
    for (std::size_t k = 0; k < input_dim_; ++k) g[dec_b_.offset + k] += dy[k];
    std::fill(dz.begin(), dz.end(), 0.0);
    nn::gemv_t(nn::at(params_, dec_w_), input_dim_, bottleneck_, dy.data(), dz.data());
    for (std::size_t i = 0; i < bottleneck_; ++i) dz[i] *= 1.0 - z[i] * z[i];
    nn::outer(g.data() + enc_w_.offset, bottleneck_, input_dim_, dz.data(), x.data());
    for (std::size_t i = 0; i < bottleneck_; ++i) g[enc_b_.offset + i] += dz[i];
  }
  return total * scale;
}

void AutoencoderModel::write(std::ostream& out) const {
  out << kMagic << ' ' << kVersion << '\n';
  out << "input " << input_dim_ << " bottleneck " << bottleneck_ << '\n';
  out << "sources " << sources_.size() << '\n';
  for (const auto& s : sources_) {
    if (s.name.empty() || s.name.find_first_of(" \t\n") != std::string::npos)
      throw FormatError("source name must be a non-empty token: '" + s.name + "'");
    out << s.name << ' ' << s.dim << '\n';
  }
  out << "params " << params_.size() << '\n';
  nn::write_values(out, params_);
}

AutoencoderModel AutoencoderModel::read(std::istream& in) {
  nn::expect_token(in, kMagic);
  if (nn::read_size(in) != kVersion) throw FormatError("unsupported autoencoder model version");
  AutoencoderModel m;
  nn::expect_token(in, "input");
  const std::size_t input = nn::read_size(in);
  nn::expect_token(in, "bottleneck");
  m.bottleneck_ = nn::read_size(in);
  nn::expect_token(in, "sources");
  const std::size_t n = nn::read_size(in);
  for (std::size_t i = 0; i < n; ++i) {
    Source s;
    s.name = nn::read_token(in);
    s.dim = nn::read_size(in);
    m.sources_.push_back(s);
  }
  if (m.bottleneck_ < 1) throw FormatError("autoencoder model has a zero bottleneck");
  m.make_layout();
  if (m.input_dim_ != input) throw FormatError("autoencoder source dimensions do not sum to the input width");
  nn::expect_token(in, "params");
  if (nn::read_size(in) != m.params_.size()) throw FormatError("autoencoder parameter count mismatch");
  m.params_ = nn::read_values(in, m.params_.size());
  return m;
}

std::vector<double> concat_embeddings(const std::vector<EmbeddingTable>& tables, const std::string& word) {
  const auto key = text::lowercase(word);
  std::vector<double> x;
  for (const auto& t : tables) {
    const auto v = t.lookup(key);
    x.insert(x.end(), v.begin(), v.end());
  }
  return x;
}

std::vector<std::string> shared_vocabulary(const std::vector<EmbeddingTable>& tables) {
  if (tables.empty()) return {};
  std::vector<std::string> out;
  for (const auto& w : tables[0].words()) {
    if (w == EmbeddingTable::kUnknownWord) continue;
    if (std::all_of(tables.begin() + 1, tables.end(), [&](const EmbeddingTable& t) { return t.contains(w); }))
      out.push_back(w);
  }
  std::sort(out.begin(), out.end());
  return out;
}

AutoencoderModel train_autoencoder_on(const std::vector<std::vector<double>>& inputs,
                                      std::vector<AutoencoderModel::Source> sources, const AutoencoderConfig& cfg,
                                      double* final_error) {
  if (cfg.bottleneck < 1) throw ConfigError("autoencoder bottleneck must be at least 1");
  if (cfg.batch < 1) throw ConfigError("autoencoder batch size must be at least 1");
  if (inputs.empty()) throw DataError("autoencoder training set is empty");
  AutoencoderModel model(std::move(sources), cfg.bottleneck, cfg.seed);
  Rng rng(derive_seed(cfg.seed, "autoencoder-shuffle"));
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(model.params().size());
  std::vector<std::vector<double>> batch;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(inputs[order[i]]);
      std::fill(grad.begin(), grad.end(), 0.0);
      model.loss(batch, &grad);
      nn::add_scaled(model.params(), grad, -cfg.lr);
    }
    if (!nn::all_finite(model.params())) throw TrainingError("autoencoder training diverged; lower the learning rate");
  }
  if (final_error) *final_error = model.loss(inputs);
  return model;
}

AutoencoderModel train_autoencoder(const std::vector<EmbeddingTable>& tables, const AutoencoderConfig& cfg,
                                   double* final_error) {
  if (cfg.bottleneck < 1) throw ConfigError("autoencoder bottleneck must be at least 1");
  if (tables.size() < 2) throw ConfigError("autoencoder fusion needs at least two embedding tables");
  const auto vocab = shared_vocabulary(tables);
  if (vocab.empty()) throw DataError("embedding tables share no vocabulary");
  std::vector<AutoencoderModel::Source> sources;
  for (std::size_t i = 0; i < tables.size(); ++i)
    sources.push_back({tables[i].name().empty() ? text::format("table%zu", i) : tables[i].name(), tables[i].dim()});
  std::vector<std::vector<double>> inputs;
  inputs.reserve(vocab.size());
  for (const auto& w : vocab) inputs.push_back(concat_embeddings(tables, w));
  return train_autoencoder_on(inputs, std::move(sources), cfg, final_error);
}

std::vector<double> fuse(const AutoencoderModel& model, const std::vector<EmbeddingTable>& tables,
                         const std::string& word) {
  if (tables.size() != model.sources().size()) throw PreconditionError("fuse: table count differs from the model");
  for (std::size_t i = 0; i < tables.size(); ++i)
    if (tables[i].dim() != model.sources()[i].dim)
      throw PreconditionError("fuse: table dimension differs from the model");
  return model.encode(concat_embeddings(tables, word));
}

EmbeddingTable fused_table(const AutoencoderModel& model, const std::vector<EmbeddingTable>& tables) {
  std::set<std::string> words;
  for (const auto& t : tables)
    for (const auto& w : t.words()) words.insert(w);
  EmbeddingTable out(model.bottleneck());
  out.set_name("fused");
  for (const auto& w : words) out.set(w, fuse(model, tables, w));
  return out;
}

void save_autoencoder(const std::string& path, const AutoencoderModel& model) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write autoencoder model: " + path);
  model.write(out);
}

AutoencoderModel load_autoencoder(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open autoencoder model: " + path);
  return AutoencoderModel::read(in);
}

}  // namespace slu
