// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "slu/embeddings.hpp"
#include "slu/nn.hpp"

namespace slu {

/// z = tanh(We x + be), x' = Wd z + bd, where x concatenates the source
/// embeddings in the order recorded in `sources`.
class AutoencoderModel {
 public:
  struct Source {
    std::string name;
    std::size_t dim = 0;
    bool operator==(const Source&) const = default;
  };

  AutoencoderModel() = default;
  /// Glorot-initialized weights, zero biases.
  AutoencoderModel(std::vector<Source> sources, std::size_t bottleneck, std::uint64_t seed);

  const std::vector<Source>& sources() const { return sources_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t bottleneck() const { return bottleneck_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  std::vector<double> encode(const std::vector<double>& x) const;
  std::vector<double> reconstruct(const std::vector<double>& x) const;

  /// Mean squared reconstruction error (1/(N*D)) sum ||x' - x||^2, with its
  /// gradient added to *grad when non-null.
  double loss(const std::vector<std::vector<double>>& inputs, std::vector<double>* grad = nullptr) const;

  void write(std::ostream& out) const;
  static AutoencoderModel read(std::istream& in);

  bool operator==(const AutoencoderModel&) const = default;

 private:
  void make_layout();

  std::vector<Source> sources_;
  std::size_t input_dim_ = 0;
  std::size_t bottleneck_ = 0;
  nn::Block enc_w_, enc_b_, dec_w_, dec_b_;
  std::vector<double> params_;
};

struct AutoencoderConfig {
  std::size_t bottleneck = 16;
  std::size_t epochs = 40;
  double lr = 0.5;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
};

/// Concatenation of the tables' vectors for `word` (lowercased lookup).
std::vector<double> concat_embeddings(const std::vector<EmbeddingTable>& tables, const std::string& word);

/// Words present in every table, sorted.
std::vector<std::string> shared_vocabulary(const std::vector<EmbeddingTable>& tables);

/// Mini-batch gradient descent on the shared vocabulary. Throws ConfigError
/// for a zero bottleneck or fewer than two tables, DataError for an empty
/// shared vocabulary. `final_error` receives the reconstruction error over
/// the whole shared vocabulary after training.
AutoencoderModel train_autoencoder(const std::vector<EmbeddingTable>& tables, const AutoencoderConfig& cfg,
                                   double* final_error = nullptr);

/// Same optimizer on raw input vectors.
AutoencoderModel train_autoencoder_on(const std::vector<std::vector<double>>& inputs,
                                      std::vector<AutoencoderModel::Source> sources, const AutoencoderConfig& cfg,
                                      double* final_error = nullptr);

/// Bottleneck activation of the concatenated source embeddings of `word`.
std::vector<double> fuse(const AutoencoderModel& model, const std::vector<EmbeddingTable>& tables,
                         const std::string& word);

/// Fused vectors for every word of the union of the tables' vocabularies.
EmbeddingTable fused_table(const AutoencoderModel& model, const std::vector<EmbeddingTable>& tables);

void save_autoencoder(const std::string& path, const AutoencoderModel& model);
AutoencoderModel load_autoencoder(const std::string& path);

}  // namespace slu
