#pragma once

#include "lamb/model.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace lamb {

struct TrainConfig {
  ModelConfig model;
  double learning_rate = 5e-5;
  int epochs = 5;
  int batch_size = 16;
  std::uint64_t seed = 13;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int warmup_steps = 0;      // linear warmup; 0 keeps the rate constant
  double clip_norm = 0.0;    // global-norm clipping; 0 disables
  bool strict_sum = false;   // optimize the raw token sum instead of the per-token mean
  bool shuffle = true;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct LossBreakdown {
  double nll = 0.0;      // term entering total: token mean (or raw sum in strict mode)
  double emo = 0.0;      // batch-mean cross-entropy
  double total = 0.0;    // == nll + emo
  std::size_t token_count = 0;
  double nll_sum = 0.0;  // raw sum over target tokens
};

struct BatchLoss {
  Tensor total;
  LossBreakdown breakdown;
  std::vector<int> predictions;  // argmax of the emotion logits per sample
};

BatchLoss batch_loss(const LambModel& model, std::span<const PreparedSample* const> batch,
                     const nn::ForwardContext& ctx, bool strict_sum);

class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double epsilon);

  // Parameters without a gradient this step are left untouched.
  void step(nn::ParameterStore& store, double lr_scale = 1.0);

  std::int64_t steps() const { return step_; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_state(std::int64_t step, std::vector<Matrix> m, std::vector<Matrix> v);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
  std::vector<Matrix> m_, v_;
};

// Returns the pre-clipping global norm.
double clip_grad_norm(nn::ParameterStore& store, double max_norm);

struct StepLog {
  std::int64_t step = 0;
  int epoch = 0;
  std::size_t batch = 0;
  LossBreakdown loss;
  double lr = 0.0;
  double grad_norm = 0.0;

  nlohmann::json to_json() const;
};

struct EpochSummary {
  int epoch = 0;
  std::size_t batches = 0;
  double nll = 0.0;    // means over batches of the logged terms
  double emo = 0.0;
  double total = 0.0;
  double nll_sum = 0.0;
  std::size_t tokens = 0;
  double accuracy = 0.0;  // emotion accuracy on the training batches (dropout on)

  nlohmann::json to_json() const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Trainer {
 public:
  Trainer(LambModel& model, TrainConfig config);

  using StepCallback = std::function<void(const StepLog&)>;
  using EpochCallback = std::function<void(const EpochSummary&)>;

  // Runs the remaining epochs (all of them on a fresh trainer). Throws
  // TrainingError naming the batch on a non-finite loss.
  std::vector<EpochSummary> run(const std::vector<PreparedSample>& data, const StepCallback& on_step = {},
                                const EpochCallback& on_epoch = {});

  LambModel& model() { return model_; }
  const LambModel& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }
  int epochs_done() const { return epochs_done_; }
  void set_epochs_done(int e) { epochs_done_ = e; }

 private:
  LambModel& model_;
  TrainConfig cfg_;
  Adam adam_;
  Rng rng_;
  int epochs_done_ = 0;
};

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckOptions {
  double h = 1e-5;
  // Denominator floor of the relative error. One ulp of a loss near 5 moves
  // the central difference by ~4.4e-11, so structurally zero gradients
  // (e.g. attention key biases) need a floor well above that.
  double floor = 1e-5;
  // Applied to the analytic gradients before comparison (test hook).
  std::function<void(nn::ParameterStore&)> tamper;
};

struct GradCheckGroup {
  std::string group;
  std::size_t parameters = 0;
  std::size_t entries = 0;
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[r,c]"
};

struct GradCheckReport {
  std::vector<GradCheckGroup> groups;
  double max_rel_error() const;
  bool passed(double tolerance = 1e-4) const { return max_rel_error() < tolerance; }
  const GradCheckGroup* find(std::string_view group) const;
  nlohmann::json to_json() const;
};

using GroupFn = std::function<std::string(std::string_view)>;

GradCheckReport grad_check(nn::ParameterStore& store, const std::function<Tensor()>& loss,
                           const GradCheckOptions& options = {}, const GroupFn& group_of = parameter_group);

// Micro model (d=8, L=1, vocab <= 32) and synthetic batch for the gradient suite.
struct GradCheckFixture {
  ModelConfig config;
  std::vector<PreparedSample> samples;
};
GradCheckFixture micro_grad_fixture(std::uint64_t seed);
GradCheckReport run_model_grad_check(std::uint64_t seed, const GradCheckOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedMatrix {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  nlohmann::json config;  // TrainConfig snapshot
  std::vector<NamedMatrix> parameters;
  bool has_optimizer = false;
  std::int64_t adam_step = 0;
  std::vector<Matrix> adam_m, adam_v;
  int epoch = 0;
  std::string rng_state;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Checkpoint capture_checkpoint(const Trainer& trainer);
Checkpoint capture_checkpoint(const LambModel& model, const TrainConfig& config);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws CheckpointError with the byte offset on corruption or truncation,
// and on a version other than kCheckpointVersion.
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);
// Validates every name and shape before writing anything.
void apply_checkpoint(const Checkpoint& ckpt, LambModel& model, Adam* adam = nullptr, Rng* rng = nullptr);

}  // namespace lamb
