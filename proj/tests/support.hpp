// Shared fixtures and independent reference computations for the test binaries.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "advtext/ensemble.hpp"
#include "advtext/rng.hpp"
#include "advtext/victim.hpp"

namespace testing {

using namespace advtext;

/// Predictor backed by a plain function.
class FnPredictor final : public victim::Predictor {
 public:
  FnPredictor(std::size_t classes, std::function<std::vector<double>(std::span<const std::string>)> fn)
      : classes_(classes), fn_(std::move(fn)) {}
  std::size_t num_classes() const override { return classes_; }
  std::vector<double> predict(std::span<const std::string> tokens) const override { return fn_(tokens); }

 private:
  std::size_t classes_;
  std::function<std::vector<double>(std::span<const std::string>)> fn_;
};

/// Counts every call that reaches the wrapped predictor.
class CountingPredictor final : public victim::Predictor {
 public:
  explicit CountingPredictor(const victim::Predictor& inner) : inner_(inner) {}
  std::size_t num_classes() const override { return inner_.num_classes(); }
  std::vector<double> predict(std::span<const std::string> tokens) const override {
    ++calls;
    return inner_.predict(tokens);
  }
  mutable std::size_t calls = 0;

 private:
  const victim::Predictor& inner_;
};

inline std::vector<std::string> word_list(std::size_t n, const std::string& prefix = "w") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

/// Small model with every parameter drawn uniformly from [-scale, scale].
inline victim::Model random_model(std::uint64_t seed, std::size_t words, std::size_t dim, std::size_t hidden,
                                  std::size_t classes, victim::Activation act, double scale = 1.0) {
  auto model = victim::Model(corpus::Vocabulary::from_words(word_list(words)), dim, hidden, classes, act);
  Rng rng(seed);
  for (std::size_t r = 1; r < model.embedding.rows; ++r) {  // PAD row stays zero
    for (double& x : model.embedding.row(r)) x = rng.uniform(-scale, scale);
  }
  for (double& x : model.w1.data) x = rng.uniform(-scale, scale);
  for (double& x : model.b1) x = rng.uniform(-scale, scale);
  for (double& x : model.w2.data) x = rng.uniform(-scale, scale);
  for (double& x : model.b2) x = rng.uniform(-scale, scale);
  return model;
}

inline std::vector<victim::Example> random_batch(Rng& rng, const victim::Model& model, std::size_t n,
                                                 std::size_t max_len) {
  std::vector<victim::Example> batch;
  for (std::size_t e = 0; e < n; ++e) {
    victim::Example ex;
    const std::size_t len = 1 + rng.below(max_len);
    for (std::size_t i = 0; i < len; ++i) ex.ids.push_back(static_cast<TokenId>(1 + rng.below(model.vocab().size() - 1)));
    ex.label = rng.below(model.num_classes());
    batch.push_back(std::move(ex));
  }
  return batch;
}

/// Mean cross-entropy computed directly from the model definition.
inline double reference_loss(const victim::Model& m, std::span<const victim::Example> batch,
                             std::span<const victim::Matrix> deltas) {
  double total = 0.0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const auto& ids = batch[e].ids;
    std::vector<double> pooled(m.dim(), 0.0);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t j = 0; j < m.dim(); ++j) {
        pooled[j] += m.embedding(ids[i], j) + (deltas.empty() ? 0.0 : deltas[e](i, j));
      }
    }
    for (double& x : pooled) x /= static_cast<double>(ids.size());
    std::vector<double> logits(m.b2);
    for (std::size_t h = 0; h < m.hidden(); ++h) {
      double pre = m.b1[h];
      for (std::size_t j = 0; j < m.dim(); ++j) pre += pooled[j] * m.w1(j, h);
      const double post = m.activation() == victim::Activation::tanh ? std::tanh(pre) : std::max(0.0, pre);
      for (std::size_t c = 0; c < m.num_classes(); ++c) logits[c] += post * m.w2(h, c);
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    total += top + std::log(z) - logits[batch[e].label];
  }
  return total / static_cast<double>(batch.size());
}

struct GradCheck {
  double worst_rel = 0.0;
  std::size_t checked = 0;
  std::size_t violations = 0;
};

/// Analytic vs central-difference agreement: a coordinate passes when the
/// absolute gap is <= abs_floor or the relative gap is <= rel_tol.
inline void compare(GradCheck& out, double analytic, double numeric, double rel_tol, double abs_floor) {
  const double gap = std::abs(analytic - numeric);
  const double rel = gap / std::max({std::abs(analytic), std::abs(numeric), 1e-300});
  ++out.checked;
  if (std::max(std::abs(analytic), std::abs(numeric)) > abs_floor) out.worst_rel = std::max(out.worst_rel, rel);
  if (gap > abs_floor && rel > rel_tol) ++out.violations;
}

inline GradCheck finite_difference_check(const victim::Model& model, std::span<const victim::Example> batch,
                                         std::vector<victim::Matrix> deltas, double h = 1e-4,
                                         double rel_tol = 1e-3, double abs_floor = 1e-6) {
  GradCheck out;
  const auto res = victim::loss_and_grads(model, batch, deltas);
  victim::Model m = model;
  const auto probe = [&](double& x, double analytic) {
    const double keep = x;
    x = keep + h;
    const double up = reference_loss(m, batch, deltas);
    x = keep - h;
    const double down = reference_loss(m, batch, deltas);
    x = keep;
    compare(out, analytic, (up - down) / (2 * h), rel_tol, abs_floor);
  };
  // embedding rows that appear in the batch
  std::vector<bool> used(m.embedding.rows, false);
  for (const auto& ex : batch) {
    for (auto id : ex.ids) used[id] = true;
  }
  for (std::size_t r = 0; r < m.embedding.rows; ++r) {
    if (!used[r]) continue;
    for (std::size_t j = 0; j < m.dim(); ++j) probe(m.embedding(r, j), res.grads.embedding(r, j));
  }
  for (std::size_t i = 0; i < m.w1.data.size(); ++i) probe(m.w1.data[i], res.grads.w1.data[i]);
  for (std::size_t i = 0; i < m.b1.size(); ++i) probe(m.b1[i], res.grads.b1[i]);
  for (std::size_t i = 0; i < m.w2.data.size(); ++i) probe(m.w2.data[i], res.grads.w2.data[i]);
  for (std::size_t i = 0; i < m.b2.size(); ++i) probe(m.b2[i], res.grads.b2[i]);
  for (std::size_t e = 0; e < deltas.size(); ++e) {
    for (std::size_t i = 0; i < deltas[e].data.size(); ++i) {
      const double keep = deltas[e].data[i];
      deltas[e].data[i] = keep + h;
      const double up = reference_loss(m, batch, deltas);
      deltas[e].data[i] = keep - h;
      const double down = reference_loss(m, batch, deltas);
      deltas[e].data[i] = keep;
      compare(out, res.delta_grads[e].data[i], (up - down) / (2 * h), rel_tol, abs_floor);
    }
  }
  return out;
}

/// Mean-vector cosine clamped to [0, 1], straight from the table rows.
inline double reference_similarity(std::span<const std::string> a, std::span<const std::string> b,
                                   const embed::EmbeddingTable& table) {
  std::vector<double> va(table.dim(), 0.0), vb(table.dim(), 0.0);
  for (const auto& w : a) {
    if (auto r = table.find(w)) {
      for (std::size_t j = 0; j < table.dim(); ++j) va[j] += table.row(*r)[j] / a.size();
    }
  }
  for (const auto& w : b) {
    if (auto r = table.find(w)) {
      for (std::size_t j = 0; j < table.dim(); ++j) vb[j] += table.row(*r)[j] / b.size();
    }
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t j = 0; j < table.dim(); ++j) {
    dot += va[j] * vb[j];
    na += va[j] * va[j];
    nb += vb[j] * vb[j];
  }
  if (na == 0 || nb == 0) return 0.0;
  return std::clamp(dot / std::sqrt(na * nb), 0.0, 1.0);
}

}  // namespace testing
