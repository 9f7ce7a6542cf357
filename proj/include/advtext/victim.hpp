#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "advtext/common.hpp"
#include "advtext/corpus.hpp"
#include "advtext/embedding.hpp"

namespace advtext::victim {

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  double frobenius() const;
  bool operator==(const Matrix&) const = default;
};

enum class Activation { tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Mean-pooled embedding -> one hidden layer -> softmax.
class Model {
 public:
  Model() = default;
  Model(corpus::Vocabulary vocab, std::size_t dim, std::size_t hidden, std::size_t num_classes,
        Activation activation);

  /// Embedding rows come from `defender` where the word exists, otherwise
  /// uniform in [-0.1, 0.1]; the PAD row is zero.
  static Model initialize(corpus::Vocabulary vocab, const embed::EmbeddingTable* defender, std::size_t dim,
                          std::size_t hidden, std::size_t num_classes, Activation activation,
                          std::uint64_t seed);

  const corpus::Vocabulary& vocab() const { return vocab_; }
  std::size_t dim() const { return embedding.cols; }
  std::size_t hidden() const { return w1.cols; }
  std::size_t num_classes() const { return w2.cols; }
  Activation activation() const { return activation_; }

  bool all_finite() const;
  bool operator==(const Model& other) const;

  Matrix embedding;  // vocab x dim
  Matrix w1;         // dim x hidden
  std::vector<double> b1;
  Matrix w2;  // hidden x classes
  std::vector<double> b2;

 private:
  corpus::Vocabulary vocab_;
  Activation activation_ = Activation::tanh;
};

struct ForwardTrace {
  std::vector<double> pooled;
  std::vector<double> pre;
  std::vector<double> post;
  std::vector<double> logits;
  std::vector<double> probs;
  bool degenerate = false;  // empty input, pooled the PAD row
};

/// `delta`, when given, has one row per token and is added to the token
/// embeddings before pooling (PAD positions excluded).
ForwardTrace forward(const Model& model, std::span<const TokenId> ids, const Matrix* delta = nullptr);

std::vector<double> softmax(std::span<const double> logits);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

struct Example {
  std::vector<TokenId> ids;
  ClassIndex label = 0;
};

std::vector<Example> encode(const corpus::Dataset& dataset, const corpus::Vocabulary& vocab);

/// Parameter-shaped gradient buffer.
struct Gradients {
  Matrix embedding;
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;

  static Gradients zeros_like(const Model& model);
  void add_scaled(const Gradients& other, double scale);
  void scale(double s);
};

struct LossResult {
  double loss = 0.0;  // mean cross-entropy over the batch
  Gradients grads;
  std::vector<Matrix> delta_grads;  // d loss / d delta, one per example
  std::vector<std::vector<double>> probs;
};

/// Cross-entropy and its gradients by manual backprop. `deltas` is either
/// empty or holds one (len x dim) matrix per example. Throws on a non-finite
/// loss, naming `batch_id`.
LossResult loss_and_grads(const Model& model, std::span<const Example> batch,
                          std::span<const Matrix> deltas = {}, std::uint64_t batch_id = 0);

/// Applies `param -= lr * grad`; the embedding step is scaled by
/// `embedding_lr_scale` and the PAD row never moves.
void sgd_step(Model& model, const Gradients& grads, double lr, double embedding_lr_scale);

struct TrainConfig {
  std::size_t epochs = 20;
  double learning_rate = 0.5;
  std::size_t batch_size = 16;
  double embedding_lr_scale = 1.0;
  std::uint64_t seed = 0;
};

struct TrainStats {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_accuracy;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, const std::string& message)
      : Error("victim", message), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

/// Computes the parameter gradient for one shuffled batch; `rng_seed` is
/// unique per (epoch, batch).
using BatchStep = std::function<LossResult(const Model&, std::span<const Example>, std::uint64_t rng_seed,
                                           std::uint64_t batch_id)>;

/// Mini-batch SGD with seeded shuffling; `step` defaults to plain
/// cross-entropy.
TrainStats train(Model& model, std::span<const Example> data, const TrainConfig& config,
                 const BatchStep& step = {});

double accuracy(const Model& model, std::span<const Example> data);

/// Versioned binary checkpoint: shapes, activation, vocabulary and
/// row-major parameters.
std::string serialize(const Model& model);
Model deserialize(const std::string& bytes);
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_hash(const Model& model);

}  // namespace advtext::victim
