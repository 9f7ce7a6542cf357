#include "advtext/victim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "advtext/digest.hpp"
#include "advtext/rng.hpp"

namespace advtext::victim {

namespace {

Error victim_error(const std::string& message) { return Error("victim", message); }

double activate(Activation a, double x) { return a == Activation::tanh ? std::tanh(x) : std::max(0.0, x); }

double activate_grad(Activation a, double pre, double post) {
  return a == Activation::tanh ? 1.0 - post * post : (pre > 0.0 ? 1.0 : 0.0);
}

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

double Matrix::frobenius() const {
  double s = 0.0;
  for (double x : data) s += x * x;
  return std::sqrt(s);
}

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw victim_error("unknown activation '" + s + "'");
}

Model::Model(corpus::Vocabulary vocab, std::size_t dim, std::size_t hidden, std::size_t num_classes,
             Activation activation)
    : embedding(vocab.size(), dim),
      w1(dim, hidden),
      b1(hidden, 0.0),
      w2(hidden, num_classes),
      b2(num_classes, 0.0),
      vocab_(std::move(vocab)),
      activation_(activation) {}

Model Model::initialize(corpus::Vocabulary vocab, const embed::EmbeddingTable* defender, std::size_t dim,
                        std::size_t hidden, std::size_t num_classes, Activation activation,
                        std::uint64_t seed) {
  if (defender && defender->dim() != dim) throw victim_error("defender table dimension mismatch");
  Model m(std::move(vocab), dim, hidden, num_classes, activation);
  Rng rng(mix_seed(seed, 0x1417));
  for (std::size_t v = 0; v < m.vocab_.size(); ++v) {
    auto row = m.embedding.row(v);
    if (v == corpus::Vocabulary::kPad) continue;
    std::optional<std::size_t> hit;
    if (defender) hit = defender->find(m.vocab_.word(static_cast<TokenId>(v)));
    if (hit) {
      const auto src = defender->row(*hit);
      std::copy(src.begin(), src.end(), row.begin());
    } else {
      for (double& x : row) x = rng.uniform(-0.1, 0.1);
    }
  }
  const double r1 = std::sqrt(6.0 / static_cast<double>(dim + hidden));
  for (double& x : m.w1.data) x = rng.uniform(-r1, r1);
  const double r2 = std::sqrt(6.0 / static_cast<double>(hidden + num_classes));
  for (double& x : m.w2.data) x = rng.uniform(-r2, r2);
  return m;
}

bool Model::all_finite() const {
  return finite(embedding.data) && finite(w1.data) && finite(b1) && finite(w2.data) && finite(b2);
}

bool Model::operator==(const Model& other) const {
  return vocab_.words() == other.vocab_.words() && activation_ == other.activation_ &&
         embedding == other.embedding && w1 == other.w1 && b1 == other.b1 && w2 == other.w2 &&
         b2 == other.b2;
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - m);
    z += p[c];
  }
  for (double& x : p) x /= z;
  return p;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

ForwardTrace forward(const Model& model, std::span<const TokenId> ids, const Matrix* delta) {
  const std::size_t d = model.dim();
  const std::size_t h = model.hidden();
  const std::size_t k = model.num_classes();
  ForwardTrace tr;
  tr.pooled.assign(d, 0.0);
  if (ids.empty()) {
    tr.degenerate = true;
    const auto pad = model.embedding.row(corpus::Vocabulary::kPad);
    std::copy(pad.begin(), pad.end(), tr.pooled.begin());
  } else {
    if (delta && (delta->rows != ids.size() || delta->cols != d)) {
      throw victim_error("perturbation shape does not match input");
    }
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] >= model.embedding.rows) throw victim_error("token id out of range");
      const auto row = model.embedding.row(ids[i]);
      for (std::size_t j = 0; j < d; ++j) tr.pooled[j] += row[j];
      if (delta && ids[i] != corpus::Vocabulary::kPad) {
        const auto drow = delta->row(i);
        for (std::size_t j = 0; j < d; ++j) tr.pooled[j] += drow[j];
      }
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (double& x : tr.pooled) x *= inv;
  }
  tr.pre.assign(model.b1.begin(), model.b1.end());
  for (std::size_t j = 0; j < d; ++j) {
    const double pj = tr.pooled[j];
    const auto wrow = model.w1.row(j);
    for (std::size_t u = 0; u < h; ++u) tr.pre[u] += pj * wrow[u];
  }
  tr.post.resize(h);
  for (std::size_t u = 0; u < h; ++u) tr.post[u] = activate(model.activation(), tr.pre[u]);
  tr.logits.assign(model.b2.begin(), model.b2.end());
  for (std::size_t u = 0; u < h; ++u) {
    const double a = tr.post[u];
    const auto wrow = model.w2.row(u);
    for (std::size_t c = 0; c < k; ++c) tr.logits[c] += a * wrow[c];
  }
  tr.probs = softmax(tr.logits);
  return tr;
}

std::vector<Example> encode(const corpus::Dataset& dataset, const corpus::Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(dataset.size());
  for (const auto& doc : dataset.documents) out.push_back({vocab.encode(doc.tokens), doc.label});
  return out;
}

Gradients Gradients::zeros_like(const Model& model) {
  Gradients g;
  g.embedding = Matrix(model.embedding.rows, model.embedding.cols);
  g.w1 = Matrix(model.w1.rows, model.w1.cols);
  g.b1.assign(model.b1.size(), 0.0);
  g.w2 = Matrix(model.w2.rows, model.w2.cols);
  g.b2.assign(model.b2.size(), 0.0);
  return g;
}

void Gradients::add_scaled(const Gradients& other, double s) {
  auto axpy = [s](std::vector<double>& y, const std::vector<double>& x) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += s * x[i];
  };
  axpy(embedding.data, other.embedding.data);
  axpy(w1.data, other.w1.data);
  axpy(b1, other.b1);
  axpy(w2.data, other.w2.data);
  axpy(b2, other.b2);
}

void Gradients::scale(double s) {
  for (auto* v : {&embedding.data, &w1.data, &b1, &w2.data, &b2}) {
    for (double& x : *v) x *= s;
  }
}

LossResult loss_and_grads(const Model& model, std::span<const Example> batch, std::span<const Matrix> deltas,
                          std::uint64_t batch_id) {
  if (batch.empty()) throw victim_error("empty batch");
  if (!deltas.empty() && deltas.size() != batch.size()) {
    throw victim_error("perturbation count does not match batch");
  }
  const std::size_t d = model.dim();
  const std::size_t h = model.hidden();
  const std::size_t k = model.num_classes();
  const double w = 1.0 / static_cast<double>(batch.size());

  LossResult out;
  out.grads = Gradients::zeros_like(model);
  out.delta_grads.reserve(batch.size());
  out.probs.reserve(batch.size());
  std::vector<double> dlogits(k), dpre(h), dpooled(d);

  for (std::size_t e = 0; e < batch.size(); ++e) {
    const auto& ex = batch[e];
    const Matrix* delta = deltas.empty() ? nullptr : &deltas[e];
    const auto tr = forward(model, ex.ids, delta);
    const double m = *std::max_element(tr.logits.begin(), tr.logits.end());
    double z = 0.0;
    for (double l : tr.logits) z += std::exp(l - m);
    const double loss = m + std::log(z) - tr.logits.at(ex.label);
    if (!std::isfinite(loss)) {
      throw victim_error("non-finite loss in batch " + std::to_string(batch_id));
    }
    out.loss += w * loss;

    for (std::size_t c = 0; c < k; ++c) dlogits[c] = w * (tr.probs[c] - (c == ex.label ? 1.0 : 0.0));
    for (std::size_t c = 0; c < k; ++c) out.grads.b2[c] += dlogits[c];
    for (std::size_t u = 0; u < h; ++u) {
      const auto wrow = model.w2.row(u);
      auto grow = out.grads.w2.row(u);
      double acc = 0.0;
      for (std::size_t c = 0; c < k; ++c) {
        grow[c] += tr.post[u] * dlogits[c];
        acc += wrow[c] * dlogits[c];
      }
      dpre[u] = acc * activate_grad(model.activation(), tr.pre[u], tr.post[u]);
      out.grads.b1[u] += dpre[u];
    }
    for (std::size_t j = 0; j < d; ++j) {
      const auto wrow = model.w1.row(j);
      auto grow = out.grads.w1.row(j);
      double acc = 0.0;
      for (std::size_t u = 0; u < h; ++u) {
        grow[u] += tr.pooled[j] * dpre[u];
        acc += wrow[u] * dpre[u];
      }
      dpooled[j] = acc;
    }

    Matrix dd(ex.ids.size(), d);
    if (ex.ids.empty()) {
      // degenerate input pools the frozen PAD row; nothing to propagate
    } else {
      const double inv = 1.0 / static_cast<double>(ex.ids.size());
      for (std::size_t i = 0; i < ex.ids.size(); ++i) {
        if (ex.ids[i] == corpus::Vocabulary::kPad) continue;
        auto erow = out.grads.embedding.row(ex.ids[i]);
        auto drow = dd.row(i);
        for (std::size_t j = 0; j < d; ++j) {
          const double g = dpooled[j] * inv;
          erow[j] += g;
          drow[j] = g;
        }
      }
    }
    out.delta_grads.push_back(std::move(dd));
    out.probs.push_back(tr.probs);
  }
  return out;
}

void sgd_step(Model& model, const Gradients& grads, double lr, double embedding_lr_scale) {
  const double elr = lr * embedding_lr_scale;
  if (elr != 0.0) {
    const std::size_t d = model.dim();
    for (std::size_t v = 0; v < model.embedding.rows; ++v) {
      if (v == corpus::Vocabulary::kPad) continue;
      auto row = model.embedding.row(v);
      const auto g = grads.embedding.row(v);
      for (std::size_t j = 0; j < d; ++j) row[j] -= elr * g[j];
    }
  }
  for (std::size_t i = 0; i < model.w1.data.size(); ++i) model.w1.data[i] -= lr * grads.w1.data[i];
  for (std::size_t i = 0; i < model.b1.size(); ++i) model.b1[i] -= lr * grads.b1[i];
  for (std::size_t i = 0; i < model.w2.data.size(); ++i) model.w2.data[i] -= lr * grads.w2.data[i];
  for (std::size_t i = 0; i < model.b2.size(); ++i) model.b2[i] -= lr * grads.b2[i];
}

TrainStats train(Model& model, std::span<const Example> data, const TrainConfig& config, const BatchStep& step) {
  if (data.empty()) throw victim_error("training set is empty");
  if (config.batch_size == 0) throw victim_error("batch size must be >= 1");
  TrainStats stats;
  std::vector<std::size_t> order(data.size());
  std::vector<Example> batch;
  std::uint64_t batch_id = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config.seed, 0xe90c0000 + epoch));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        batch.push_back(data[order[i]]);
      }
      LossResult res;
      try {
        const std::uint64_t stream = mix_seed(config.seed, batch_id);
        res = step ? step(model, batch, stream, batch_id) : loss_and_grads(model, batch, {}, batch_id);
      } catch (const Error& err) {
        throw DivergenceError(epoch, "training diverged at epoch " + std::to_string(epoch) + ": " + err.what());
      }
      sgd_step(model, res.grads, config.learning_rate, config.embedding_lr_scale);
      if (!std::isfinite(res.loss) || !model.all_finite()) {
        throw DivergenceError(epoch, "training diverged at epoch " + std::to_string(epoch));
      }
      loss_sum += res.loss * static_cast<double>(batch.size());
      ++batch_id;
    }
    stats.epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
    stats.epoch_accuracy.push_back(accuracy(model, data));
  }
  return stats;
}

double accuracy(const Model& model, std::span<const Example> data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data) {
    if (argmax(forward(model, ex.ids).logits) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

constexpr char kMagic[8] = {'A', 'D', 'V', 'M', 'O', 'D', 'E', 'L'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_values(std::string& out, const std::vector<double>& v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_values(std::vector<double>& v) {
    need(v.size() * sizeof(double));
    std::memcpy(v.data(), bytes_.data() + pos_, v.size() * sizeof(double));
    pos_ += v.size() * sizeof(double);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw victim_error("truncated checkpoint");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize(const Model& model) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kVersion);
  put<std::uint8_t>(out, model.activation() == Activation::tanh ? 0 : 1);
  put<std::uint64_t>(out, model.vocab().size());
  put<std::uint64_t>(out, model.dim());
  put<std::uint64_t>(out, model.hidden());
  put<std::uint64_t>(out, model.num_classes());
  for (const auto& w : model.vocab().words()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(w.size()));
    out += w;
  }
  put_values(out, model.embedding.data);
  put_values(out, model.w1.data);
  put_values(out, model.b1);
  put_values(out, model.w2.data);
  put_values(out, model.b2);
  return out;
}

Model deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_string(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw victim_error("not a checkpoint");
  if (const auto v = r.get<std::uint32_t>(); v != kVersion) {
    throw victim_error("unsupported checkpoint version " + std::to_string(v));
  }
  const auto act = r.get<std::uint8_t>() == 0 ? Activation::tanh : Activation::relu;
  const auto vsize = r.get<std::uint64_t>();
  const auto dim = r.get<std::uint64_t>();
  const auto hidden = r.get<std::uint64_t>();
  const auto classes = r.get<std::uint64_t>();
  std::vector<std::string> words;
  words.reserve(vsize);
  for (std::uint64_t i = 0; i < vsize; ++i) words.push_back(r.get_string(r.get<std::uint32_t>()));
  if (vsize < 2 || words[0] != corpus::Vocabulary::kPadToken || words[1] != corpus::Vocabulary::kUnkToken) {
    throw victim_error("checkpoint vocabulary lacks reserved entries");
  }
  auto vocab = corpus::Vocabulary::from_words({words.begin() + 2, words.end()});
  if (vocab.words() != words) throw victim_error("checkpoint vocabulary is not canonical");
  Model m(std::move(vocab), dim, hidden, classes, act);
  r.get_values(m.embedding.data);
  r.get_values(m.w1.data);
  r.get_values(m.b1);
  r.get_values(m.w2.data);
  r.get_values(m.b2);
  if (!r.done()) throw victim_error("trailing bytes in checkpoint");
  return m;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw victim_error("cannot write " + path.string());
  const auto bytes = serialize(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw victim_error("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

std::string checkpoint_hash(const Model& model) { return sha256_hex(serialize(model)); }

}  // namespace advtext::victim
