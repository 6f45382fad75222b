#include "lamb/training.hpp"

#include "lamb/digest.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace lamb {

using nlohmann::json;

void TrainConfig::validate() const {
  model.validate();
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("train config: ") + what);
  };
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(epochs > 0, "epochs must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "Adam betas must lie in [0, 1)");
  require(epsilon > 0.0, "epsilon must be positive");
  require(warmup_steps >= 0, "warmup_steps must be non-negative");
  require(clip_norm >= 0.0, "clip_norm must be non-negative");
}

json TrainConfig::to_json() const {
  return {{"model", model.to_json()},       {"learning_rate", learning_rate}, {"epochs", epochs},
          {"batch_size", batch_size},       {"seed", seed},                   {"beta1", beta1},
          {"beta2", beta2},                 {"epsilon", epsilon},             {"warmup_steps", warmup_steps},
          {"clip_norm", clip_norm},         {"strict_sum", strict_sum},       {"shuffle", shuffle}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.strict_sum = j.value("strict_sum", c.strict_sum);
  c.shuffle = j.value("shuffle", c.shuffle);
  return c;
}

BatchLoss batch_loss(const LambModel& model, std::span<const PreparedSample* const> batch,
                     const nn::ForwardContext& ctx, bool strict_sum) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  std::vector<Tensor> nll_terms, emo_terms;
  BatchLoss out;
  for (const PreparedSample* s : batch) {
    SampleLoss l = model.loss(*s, ctx);
    out.breakdown.token_count += l.nll.token_count();
    nll_terms.push_back(l.nll.total);
    emo_terms.push_back(l.emo);
    const Matrix& logits = l.emotion_logits.value();
    out.predictions.push_back(argmax(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size()))));
  }
  const Tensor nll_sum = ag::sum(ag::concat_rows(nll_terms));
  const Tensor emo_sum = ag::sum(ag::concat_rows(emo_terms));
  const Tensor nll = strict_sum ? nll_sum : ag::scale(nll_sum, 1.0 / static_cast<double>(out.breakdown.token_count));
  const Tensor emo = ag::scale(emo_sum, 1.0 / static_cast<double>(batch.size()));
  out.total = ag::add(nll, emo);
  out.breakdown.nll_sum = nll_sum.item();
  out.breakdown.nll = nll.item();
  out.breakdown.emo = emo.item();
  out.breakdown.total = out.total.item();
  return out;
}

Adam::Adam(double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

void Adam::set_state(std::int64_t step, std::vector<Matrix> m, std::vector<Matrix> v) {
  if (m.size() != v.size()) throw std::invalid_argument("Adam: moment vectors differ in length");
  step_ = step;
  m_ = std::move(m);
  v_ = std::move(v);
}

void Adam::step(nn::ParameterStore& store, double lr_scale) {
  auto& params = store.parameters();
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
      v_.push_back(Matrix::Zero(p.tensor.rows(), p.tensor.cols()));
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("Adam: parameter count changed");
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  const double lr = lr_ * lr_scale;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    if (!p.node()->has_grad()) continue;
    const Matrix& g = p.grad();
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.mutable_value().array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

double clip_grad_norm(nn::ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.parameters()) {
    if (p.tensor.node()->has_grad()) sq += p.tensor.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-6);
    for (auto& p : store.parameters()) {
      if (p.tensor.node()->has_grad()) p.tensor.mutable_grad() *= s;
    }
  }
  return norm;
}

json StepLog::to_json() const {
  return {{"step", step},
          {"epoch", epoch},
          {"batch", batch},
          {"nll", loss.nll},
          {"emo", loss.emo},
          {"total", loss.total},
          {"nll_sum", loss.nll_sum},
          {"tokens", loss.token_count},
          {"lr", lr},
          {"grad_norm", grad_norm}};
}

json EpochSummary::to_json() const {
  return {{"epoch", epoch}, {"batches", batches}, {"nll", nll},           {"emo", emo},
          {"total", total}, {"nll_sum", nll_sum}, {"tokens", tokens},     {"train_accuracy", accuracy}};
}

Trainer::Trainer(LambModel& model, TrainConfig config)
    : model_(model),
      cfg_(std::move(config)),
      adam_(cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.epsilon),
      rng_(cfg_.seed) {
  cfg_.validate();
}

std::vector<EpochSummary> Trainer::run(const std::vector<PreparedSample>& data, const StepCallback& on_step,
                                       const EpochCallback& on_epoch) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  std::vector<EpochSummary> summaries;
  const nn::ForwardContext ctx{model_.config().dropout, &rng_};
  const auto batch_size = static_cast<std::size_t>(cfg_.batch_size);

  for (int epoch = epochs_done_ + 1; epoch <= cfg_.epochs; ++epoch) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (cfg_.shuffle) rng_.shuffle(order);

    EpochSummary summary;
    summary.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t begin = 0, b = 0; begin < order.size(); begin += batch_size, ++b) {
      const std::size_t end = std::min(order.size(), begin + batch_size);
      std::vector<const PreparedSample*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&data[order[i]]);

      model_.parameters().zero_grad();
      BatchLoss loss = batch_loss(model_, batch, ctx, cfg_.strict_sum);
      if (!std::isfinite(loss.breakdown.total)) {
        std::string ids;
        for (const auto* s : batch) ids += (ids.empty() ? "" : ",") + s->id;
        throw TrainingError("non-finite loss in epoch " + std::to_string(epoch) + " batch " + std::to_string(b) +
                            " (step " + std::to_string(adam_.steps() + 1) + ", samples " + ids + ")");
      }
      loss.total.backward();
      StepLog log;
      log.grad_norm = clip_grad_norm(model_.parameters(), cfg_.clip_norm);
      const double scale = cfg_.warmup_steps > 0
                               ? std::min(1.0, static_cast<double>(adam_.steps() + 1) / cfg_.warmup_steps)
                               : 1.0;
      adam_.step(model_.parameters(), scale);

      log.step = adam_.steps();
      log.epoch = epoch;
      log.batch = b;
      log.loss = loss.breakdown;
      log.lr = cfg_.learning_rate * scale;
      if (on_step) on_step(log);

      for (std::size_t i = 0; i < batch.size(); ++i) correct += loss.predictions[i] == batch[i]->emotion ? 1 : 0;
      ++summary.batches;
      summary.nll += loss.breakdown.nll;
      summary.emo += loss.breakdown.emo;
      summary.total += loss.breakdown.total;
      summary.nll_sum += loss.breakdown.nll_sum;
      summary.tokens += loss.breakdown.token_count;
    }
    const auto nb = static_cast<double>(summary.batches);
    summary.nll /= nb;
    summary.emo /= nb;
    summary.total /= nb;
    summary.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    epochs_done_ = epoch;
    summaries.push_back(summary);
    if (on_epoch) on_epoch(summary);
  }
  return summaries;
}

// ---------------------------------------------------------------------------
// Gradient checking

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.max_rel_error);
  return m;
}

const GradCheckGroup* GradCheckReport::find(std::string_view group) const {
  for (const auto& g : groups) {
    if (g.group == group) return &g;
  }
  return nullptr;
}

json GradCheckReport::to_json() const {
  json groups_json = json::array();
  for (const auto& g : groups) {
    groups_json.push_back({{"group", g.group},
                           {"parameters", g.parameters},
                           {"entries", g.entries},
                           {"max_rel_error", g.max_rel_error},
                           {"worst", g.worst}});
  }
  return {{"groups", groups_json}, {"max_rel_error", max_rel_error()}};
}

GradCheckReport grad_check(nn::ParameterStore& store, const std::function<Tensor()>& loss,
                           const GradCheckOptions& options, const GroupFn& group_of) {
  GradCheckReport report;
  if (store.size() == 0) return report;

  store.zero_grad();
  loss().backward();
  if (options.tamper) options.tamper(store);

  std::map<std::string, GradCheckGroup> groups;
  std::vector<std::string> order;
  for (auto& p : store.parameters()) {
    const std::string g = group_of(p.name);
    auto [it, inserted] = groups.try_emplace(g);
    if (inserted) {
      it->second.group = g;
      order.push_back(g);
    }
    GradCheckGroup& grp = it->second;
    ++grp.parameters;
    const Matrix analytic = p.tensor.node()->has_grad() ? p.tensor.grad()
                                                        : Matrix::Zero(p.tensor.rows(), p.tensor.cols());
    Matrix& value = p.tensor.mutable_value();
    for (Index r = 0; r < value.rows(); ++r) {
      for (Index c = 0; c < value.cols(); ++c) {
        const double saved = value(r, c);
        value(r, c) = saved + options.h;
        const double plus = loss().item();
        value(r, c) = saved - options.h;
        const double minus = loss().item();
        value(r, c) = saved;
        const double numeric = (plus - minus) / (2.0 * options.h);
        const double a = analytic(r, c);
        const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
        const double rel = std::abs(a - numeric) / denom;
        ++grp.entries;
        if (grp.worst.empty() || rel > grp.max_rel_error) {
          grp.max_rel_error = rel;
          grp.worst = p.name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
        }
      }
    }
  }
  for (const auto& g : order) report.groups.push_back(groups.at(g));
  return report;
}

GradCheckFixture micro_grad_fixture(std::uint64_t seed) {
  GradCheckFixture f;
  f.config.vocab_size = 32;
  f.config.num_emotions = 32;
  f.config.d_model = 8;
  f.config.layers = 1;
  f.config.heads = 2;
  f.config.ffn_dim = 16;
  f.config.dropout = 0.0;
  f.config.max_positions = 12;
  f.config.max_context_len = 12;
  f.config.max_target_len = 8;
  f.config.max_relation_len = 6;
  f.config.max_conect_len = 8;
  f.config.ablation = Ablation::full;
  // Larger than the production init so that attention weights and
  // activations are far from their trivial regimes.
  f.config.init_std = 0.3;

  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto word = [&] { return static_cast<int>(special::count + rng.below(32 - special::count)); };
  auto seq = [&](std::size_t n, int first) {
    std::vector<int> v;
    if (first >= 0) v.push_back(first);
    while (v.size() < n) v.push_back(word());
    return v;
  };
  for (int i = 0; i < 2; ++i) {
    PreparedSample s;
    s.id = "micro-" + std::to_string(i);
    s.context.ids = seq(7 + static_cast<std::size_t>(i), special::cls);
    s.cause.ids = seq(4, -1);
    for (auto& r : s.relations) r = seq(3, special::cls);
    s.conect = seq(5, special::cls);
    s.target = seq(4, -1);
    s.target.push_back(special::eos);
    s.emotion = static_cast<int>(rng.below(32));
    f.samples.push_back(std::move(s));
  }
  return f;
}

GradCheckReport run_model_grad_check(std::uint64_t seed, const GradCheckOptions& options) {
  const GradCheckFixture f = micro_grad_fixture(seed);
  LambModel model(f.config, seed);
  std::vector<const PreparedSample*> batch;
  for (const auto& s : f.samples) batch.push_back(&s);
  return grad_check(model.parameters(), [&] { return batch_loss(model, batch, {}, false).total; }, options);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'L', 'A', 'M', 'B', 'C', 'K', 'P', 'T'};
constexpr std::size_t kDigestLen = 64;

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    out_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void bytes(std::string_view s) {
    pod(static_cast<std::uint64_t>(s.size()));
    out_.append(s);
  }
  void matrix(const Matrix& m) {
    pod(static_cast<std::uint64_t>(m.rows()));
    pod(static_cast<std::uint64_t>(m.cols()));
    out_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + off_, sizeof(T));
    off_ += sizeof(T);
    return v;
  }
  std::string bytes(const char* what) {
    const auto n = pod<std::uint64_t>(what);
    need(n, what);
    std::string s(data_.substr(off_, n));
    off_ += n;
    return s;
  }
  Matrix matrix(const char* what) {
    const auto rows = pod<std::uint64_t>(what);
    const auto cols = pod<std::uint64_t>(what);
    if (rows > (1u << 24) || cols > (1u << 24)) fail(std::string("implausible shape for ") + what);
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
    need(n, what);
    std::memcpy(m.data(), data_.data() + off_, n);
    off_ += n;
    return m;
  }
  std::size_t offset() const { return off_; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw CheckpointError("checkpoint: " + msg + " at offset " + std::to_string(off_));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (n > data_.size() - off_) {
      fail(std::string("truncated while reading ") + what + " (need " + std::to_string(n) + " bytes, " +
           std::to_string(data_.size() - off_) + " left)");
    }
  }
  std::string_view data_;
  std::size_t off_ = 0;
};

}  // namespace

Checkpoint capture_checkpoint(const LambModel& model, const TrainConfig& config) {
  Checkpoint c;
  c.config = config.to_json();
  for (const auto& p : model.parameters().parameters()) c.parameters.push_back({p.name, p.tensor.value()});
  return c;
}

Checkpoint capture_checkpoint(const Trainer& trainer) {
  Checkpoint c = capture_checkpoint(trainer.model(), trainer.config());
  const Adam& adam = trainer.optimizer();
  c.has_optimizer = true;
  c.adam_step = adam.steps();
  c.adam_m = adam.first_moments();
  c.adam_v = adam.second_moments();
  c.epoch = trainer.epochs_done();
  c.rng_state = trainer.rng().state();
  return c;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.str().append(kMagic, sizeof(kMagic));
  w.pod(ckpt.version);
  w.bytes(ckpt.config.dump());
  w.pod(static_cast<std::uint32_t>(ckpt.parameters.size()));
  for (const auto& p : ckpt.parameters) {
    w.bytes(p.name);
    w.matrix(p.value);
  }
  w.pod(static_cast<std::uint8_t>(ckpt.has_optimizer ? 1 : 0));
  if (ckpt.has_optimizer) {
    w.pod(ckpt.adam_step);
    w.pod(static_cast<std::uint32_t>(ckpt.adam_m.size()));
    for (std::size_t i = 0; i < ckpt.adam_m.size(); ++i) {
      w.matrix(ckpt.adam_m[i]);
      w.matrix(ckpt.adam_v.at(i));
    }
  }
  w.pod(static_cast<std::int32_t>(ckpt.epoch));
  w.bytes(ckpt.rng_state);
  const std::string digest = sha256_hex(w.str());
  w.str().append(digest);
  return std::move(w.str());
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    r.fail("bad magic (not a checkpoint file)");
  }
  r.pod<std::array<char, 8>>("magic");
  Checkpoint c;
  c.version = r.pod<std::uint32_t>("version");
  if (c.version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: format version " + std::to_string(c.version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < r.offset() + kDigestLen) r.fail("truncated before checksum");
  const std::string_view body = bytes.substr(0, bytes.size() - kDigestLen);
  if (sha256_hex(body) != bytes.substr(bytes.size() - kDigestLen)) {
    throw CheckpointError("checkpoint: checksum mismatch (file truncated or corrupt) at offset " +
                          std::to_string(bytes.size() - kDigestLen));
  }
  Reader b(body);
  b.pod<std::array<char, 8>>("magic");
  b.pod<std::uint32_t>("version");
  try {
    c.config = json::parse(b.bytes("config"));
  } catch (const json::exception& e) {
    b.fail(std::string("config is not valid JSON: ") + e.what());
  }
  const auto count = b.pod<std::uint32_t>("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedMatrix p;
    p.name = b.bytes("parameter name");
    p.value = b.matrix("parameter values");
    c.parameters.push_back(std::move(p));
  }
  c.has_optimizer = b.pod<std::uint8_t>("optimizer flag") != 0;
  if (c.has_optimizer) {
    c.adam_step = b.pod<std::int64_t>("optimizer step");
    const auto n = b.pod<std::uint32_t>("moment count");
    for (std::uint32_t i = 0; i < n; ++i) {
      c.adam_m.push_back(b.matrix("first moment"));
      c.adam_v.push_back(b.matrix("second moment"));
    }
  }
  c.epoch = b.pod<std::int32_t>("epoch");
  c.rng_state = b.bytes("rng state");
  if (b.offset() != body.size()) b.fail("trailing bytes after rng state");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string data = serialize_checkpoint(ckpt);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw CheckpointError("checkpoint: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

void apply_checkpoint(const Checkpoint& ckpt, LambModel& model, Adam* adam, Rng* rng) {
  auto& params = model.parameters().parameters();
  if (ckpt.parameters.size() != params.size()) {
    throw CheckpointError("checkpoint: holds " + std::to_string(ckpt.parameters.size()) +
                          " parameters, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& src = ckpt.parameters[i];
    if (src.name != params[i].name) {
      throw CheckpointError("checkpoint: parameter " + std::to_string(i) + " is '" + src.name + "', model expects '" +
                            params[i].name + "'");
    }
    if (src.value.rows() != params[i].tensor.rows() || src.value.cols() != params[i].tensor.cols()) {
      throw CheckpointError("checkpoint: shape mismatch for '" + src.name + "'");
    }
  }
  if (adam != nullptr && ckpt.has_optimizer && !ckpt.adam_m.empty() && ckpt.adam_m.size() != params.size()) {
    throw CheckpointError("checkpoint: optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor.mutable_value() = ckpt.parameters[i].value;
  if (adam != nullptr && ckpt.has_optimizer) adam->set_state(ckpt.adam_step, ckpt.adam_m, ckpt.adam_v);
  if (rng != nullptr && !ckpt.rng_state.empty()) rng->set_state(ckpt.rng_state);
}

}  // namespace lamb
