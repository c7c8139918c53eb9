#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cats/common.hpp"
#include "cats/data.hpp"
#include "cats/metrics.hpp"
#include "cats/model.hpp"

namespace cats {

enum class LossKind { Mse, Smape };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct TrainConfig {
    Real learning_rate = Real(1e-3);
    std::size_t batch_size = 32;  // window positions per batch; channels fold into rows
    std::size_t epochs = 10;
    std::size_t patience = 0;  // 0 disables early stopping
    std::uint64_t seed = 2021;
    LossKind loss = LossKind::Mse;
    Real clip_norm = 0;  // 0 disables gradient clipping
    bool shuffle = true;

    void validate() const;
};

// Adam moment buffers; beta1 0.9, beta2 0.999, eps 1e-8.
class AdamState {
  public:
    AdamState() = default;
    explicit AdamState(const std::vector<Tensor>& params);

    Real beta1 = Real(0.9);
    Real beta2 = Real(0.999);
    Real eps = Real(1e-8);
    std::size_t step_count() const { return step_; }

    friend void adam_step(std::vector<Tensor>& params, AdamState& state, Real lr);

  private:
    std::vector<std::vector<Real>> m_;
    std::vector<std::vector<Real>> v_;
    std::size_t step_ = 0;
};

// Bias-corrected Adam update; requires a populated grad on every parameter
// and zeroes grads afterwards.
void adam_step(std::vector<Tensor>& params, AdamState& state, Real lr);

struct EpochLog {
    std::size_t epoch = 0;
    Real train_loss = 0;
    Real val_loss = 0;
    double seconds = 0;  // wall clock; the one non-deterministic log field
};

struct FitResult {
    std::vector<EpochLog> log;
    ModelParams best_params;
    std::size_t best_epoch = 0;  // 1-based; 0 when no epoch ran
    Real best_val = 0;

    void write_log_csv(const std::string& path) const;
};

// Shuffled mini-batch training with query-adaptive masking active; validation
// runs in eval mode each epoch and the best-validation parameters are
// retained. Early-stops after `patience` non-improving epochs when set.
// Mutates `params` (final state); the returned best_params is a deep copy.
FitResult fit(ModelParams& params, const CatsConfig& model_cfg, const WindowDataset& train,
              const WindowDataset& val, const TrainConfig& cfg);

struct EvalOptions {
    std::size_t batch_positions = 64;
    // In-sample (scaled) history per channel enables MASE at this season.
    const SeriesTable* insample = nullptr;
    std::size_t season = 1;
    std::optional<Real> baseline_smape;
    std::optional<Real> baseline_mase;
    const Scaler* scaler = nullptr;  // adds unscaled mse/mae to the report
};

// Eval-mode metrics over every window of the dataset, averaged per element.
// Inputs are expected in scaled space (the benchmark convention).
MetricReport evaluate(const ModelParams& params, const CatsConfig& model_cfg,
                      const WindowDataset& ds, const EvalOptions& opt = {});

}  // namespace cats
