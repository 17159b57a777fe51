#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mealscan/core/types.hpp"
#include "mealscan/segnet/network.hpp"

namespace mealscan::segnet {

/// One training example at network resolution.
struct Sample {
    Tensor input;  // 1 x 4 x H x W
    Image<std::uint8_t> food;
    Image<std::uint8_t> plate;
};

/// Builds the 4-channel network input (RGB / 255, depth / depth_scale_m, invalid depth = 0),
/// resampling to the configured input size when the frame differs.
Tensor make_input(const RgbdFrame& frame, const NetworkConfig& config);
Sample make_sample(const RgbdFrame& frame, const LabelMap& food, const LabelMap& plate, const NetworkConfig& config);
/// Majority-vote downsampling / nearest upsampling of a label image.
Image<std::uint8_t> resize_labels(const Image<std::uint8_t>& labels, int width, int height, int classes);

/// Inference on one frame; probability maps at network resolution.
ProbabilityMaps predict(Network& net, const RgbdFrame& frame);

struct TrainConfig {
    double learning_rate = 0.0002;
    int batch_size = 4;
    int max_epochs = 80;
    int early_stop_patience = 10;
    bool flip_augmentation = true;
    double food_loss_weight = 1.0;
    double plate_loss_weight = 1.0;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0;
    double val_loss = 0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;  // 0 = initial weights kept
    double initial_val_loss = 0;
    bool stopped_early = false;
};

/// Stops once the monitored loss has not decreased for `patience` consecutive epochs.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}
    /// Returns true when training should stop after this epoch.
    bool update(int epoch, double loss);
    int best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }
    bool improved_last() const { return improved_last_; }

private:
    int patience_;
    int best_epoch_ = 0;
    double best_loss_ = 0;
    bool has_best_ = false;
    bool improved_last_ = false;
    int since_best_ = 0;
};

class Adam {
public:
    Adam(const Network& net, const TrainConfig& cfg);
    void step(Network& net, const Gradients& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    long step_ = 0;
    Gradients m_, v_;
};

/// Mean loss over samples in inference mode (no augmentation).
double evaluate_loss(Network& net, const std::vector<Sample>& samples, double food_weight, double plate_weight);

struct PixelAccuracy {
    double food = 0;
    double plate = 0;
};
PixelAccuracy pixel_accuracy(Network& net, const std::vector<Sample>& samples);

/// Adam + cross-entropy with left-right / up-down flips (each with probability 0.5), early stopping on
/// validation loss, and restoration of the best-validation parameters. Deterministic in seed.
/// Throws Error(training) when a loss becomes non-finite.
TrainResult train(Network& net, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg, std::uint64_t seed,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

struct GradientCheckResult {
    double max_relative_error = 0;
    double max_abs_gradient = 0;
    std::size_t checked = 0;
    std::size_t batch_norm_checked = 0;
    std::size_t skipped_at_kink = 0;  // perturbation flipped a ReLU; central difference undefined
};

/// Gradients smaller than this are compared absolutely: at epsilon 1e-5 the central difference carries
/// roundoff of order 1e-9, so relative error below this magnitude measures noise.
inline constexpr double kGradientCheckFloor = 3e-5;

/// Central finite differences of the training-mode loss on a random parameter subset, compared to
/// backprop. Relative error is |a - n| / max(|a|, |n|, kGradientCheckFloor). Batch-norm parameters are always
/// part of the subset. Coordinates whose perturbation toggles a ReLU are skipped and replaced.
GradientCheckResult gradient_check(Network& net, const std::vector<Sample>& batch, double epsilon,
                                   std::size_t parameter_count, std::uint64_t seed);

/// Analytic gradients of the training-mode loss for a batch (running statistics untouched).
double loss_and_gradients(Network& net, const std::vector<Sample>& batch, double food_weight, double plate_weight,
                          Gradients& grads);

}  // namespace mealscan::segnet
