#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cma/datastore.hpp"
#include "cma/heads.hpp"

namespace cma {

enum class InitScheme { uniform, zero };

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-2;
    std::size_t max_epochs = 20;
    std::size_t patience = 3;
    std::size_t batch_size = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::int64_t init_seed = 0;

    // Model/loss options.
    InitScheme init = InitScheme::uniform;
    MetaInput meta_input = MetaInput::probabilities;
    std::size_t hidden_units = 0;
    bool aux_branch_loss = false;
    // When false, no validation split is drawn and the last epoch is kept.
    bool use_validation = true;
    bool label_augmentation = false;

    // Throws DataError on violated invariants.
    void validate() const;
};

// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
TrainConfig parse_train_config(const std::string& text, TrainConfig base = {});
TrainConfig load_train_config(const std::filesystem::path& path);
std::string format_train_config(const TrainConfig& cfg);

struct AdamWState {
    std::vector<Vector> m;
    std::vector<Vector> v;
    std::uint64_t step = 0;
};

AdamWState make_adamw_state(const CmaModel& model);

// One decoupled AdamW update over every parameter block of `model`:
//   w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
// Throws NumericError naming the block when a gradient is not finite.
void adamw_step(CmaModel& model, const CmaModel& grad, AdamWState& state, const TrainConfig& cfg);

// Single-block form, used by tests. `state_m`/`state_v` match `params`.
void adamw_update(std::span<double> params, std::span<const double> grads, std::span<double> state_m,
                  std::span<double> state_v, std::uint64_t step, const TrainConfig& cfg,
                  const std::string& block = "params");

// Weights uniform in ±1/sqrt(fan_in), biases zero, attention projections
// identity plus U(-1e-2, 1e-2) noise. A meta head over probabilities starts as
// the uniform average of the branch outputs plus the same small noise. Draws come from a counter-based
// generator keyed by (seed, parameter name), so the result is independent of
// allocation order.
CmaModel init_model(std::size_t d, Variant variant, std::int64_t seed,
                    MetaInput meta_input = MetaInput::probabilities, std::size_t hidden_units = 0,
                    InitScheme scheme = InitScheme::uniform);

CmaModel init_model(std::size_t d, Variant variant, const TrainConfig& cfg);

enum class StopReason { completed, early_stopped };
std::string_view stop_reason_name(StopReason r);

struct TrainHistory {
    std::vector<double> train_loss;          // per epoch
    std::vector<double> val_accuracy;        // per epoch, empty without validation
    std::size_t best_epoch = 0;              // 1-based
    std::size_t epochs_ran = 0;
    StopReason stop_reason = StopReason::completed;
};

struct TrainResult {
    CmaModel model;
    TrainHistory history;
};

double evaluate_accuracy(const CmaModel& model, const std::vector<const FeatureRecord*>& records);
std::vector<Label> predict_labels(const CmaModel& model,
                                  const std::vector<const FeatureRecord*>& records);

// Mean loss and gradient over a batch; gradients are averaged.
double batch_gradient(const CmaModel& model, std::span<const FeatureRecord* const> batch,
                      CmaModel& grad, LossOptions options = {});

// Mini-batch AdamW with per-epoch validation, best-snapshot selection and
// early stopping. The shuffle order is keyed by `shuffle_seed`.
TrainResult train_episode(const EpisodeData& data, CmaModel model, const TrainConfig& cfg,
                          std::int64_t shuffle_seed);

}  // namespace cma
