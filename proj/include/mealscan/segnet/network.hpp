#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mealscan/core/types.hpp"
#include "mealscan/segnet/kernels.hpp"

namespace mealscan::segnet {

/// Dense NCHW batch.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), v(std::size_t(n_) * c_ * h_ * w_, 0.0) {}

    std::size_t size() const { return v.size(); }
    std::size_t sample_size() const { return std::size_t(c) * h * w; }
    double* sample(int i) { return v.data() + i * sample_size(); }
    const double* sample(int i) const { return v.data() + i * sample_size(); }
    double& at(int ni, int ci, int y, int x) { return v[((std::size_t(ni) * c + ci) * h + y) * w + x]; }
    double at(int ni, int ci, int y, int x) const { return v[((std::size_t(ni) * c + ci) * h + y) * w + x]; }
};

inline constexpr int kInputChannels = 4;  // RGB + depth

struct NetworkConfig {
    int input_height = 64;
    int input_width = 64;
    /// Encoder widths of the six stages; decoder stage s uses encoder_filters[5 - s].
    std::array<int, 6> encoder_filters{4, 8, 16, 32, 64, 128};
    int food_classes = kFoodClasses;
    int plate_classes = kPlateClasses;
    int kernel_size = 3;
    double depth_scale_m = 1.0;  // depth channel = meters / depth_scale_m
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;

    /// Full-width layout: 16, 32, 64, 128, 256, 512.
    static NetworkConfig table_widths();
    /// Full widths multiplied by factor (rounded, at least 1).
    static NetworkConfig scaled(double width_factor);

    void validate() const;
};

static constexpr std::array<int, 6> kEncoderStrides{2, 2, 2, 2, 2, 1};

struct Parameter {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
};

struct ConvLayer {
    int weight = -1;
    int bias = -1;  // heads only; layers followed by batch norm carry no bias
    int in_c = 0, out_c = 0, kernel = 3, stride = 1;
    bool transposed = false;
};

struct BatchNormLayer {
    int gamma = -1, beta = -1;
    int running_mean = -1, running_var = -1;  // indices into buffers
    int channels = 0;
};

struct DecoderLayers {
    std::array<ConvLayer, 5> deconv;
    std::array<BatchNormLayer, 5> deconv_bn;
    std::array<ConvLayer, 4> skip_conv;
    std::array<BatchNormLayer, 4> skip_bn;
    ConvLayer head;
};

enum class Mode { train, inference };

/// Per-parameter gradients aligned with Network::parameters().
using Gradients = std::vector<std::vector<double>>;

/// Result of one forward pass: head logits plus the recorded tape for backprop.
struct ForwardResult {
    Tensor food_logits;
    Tensor plate_logits;
    struct Tape;
    std::shared_ptr<Tape> tape;
};

/// Multi-task encoder-decoder: a shared six-stage encoder and two decoders (food, plate), each
/// alternating stride-2 deconvolutions with skip-connected convolutions on the encoder feature of
/// matching resolution, ending in a 1x1 head.
class Network {
public:
    Network(const NetworkConfig& config, std::uint64_t seed);

    const NetworkConfig& config() const { return config_; }
    std::uint64_t seed() const { return seed_; }

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::vector<Parameter>& buffers() { return buffers_; }
    const std::vector<Parameter>& buffers() const { return buffers_; }
    std::size_t parameter_count() const;
    Gradients zero_gradients() const;

    const std::array<ConvLayer, 6>& encoder() const { return encoder_; }
    const DecoderLayers& food_decoder() const { return decoders_[0]; }
    const DecoderLayers& plate_decoder() const { return decoders_[1]; }

    /// Input is N x 4 x H x W. In train mode batch statistics are used and, when
    /// update_running_stats is set, the running averages are updated.
    ForwardResult forward(const Tensor& input, Mode mode, bool update_running_stats = false);
    /// Accumulates parameter gradients given dLoss/dlogits for both heads.
    void backward(const ForwardResult& fwd, const Tensor& food_grad, const Tensor& plate_grad, Gradients& grads) const;

private:
    int add_param(std::string name, std::vector<int> shape);
    int add_buffer(std::string name, int size, double fill);
    ConvLayer make_conv(const std::string& name, int in_c, int out_c, int kernel, int stride, bool transposed, bool bias);
    BatchNormLayer make_bn(const std::string& name, int channels);
    void initialize(std::uint64_t seed);

    NetworkConfig config_;
    std::uint64_t seed_ = 0;
    std::vector<Parameter> params_;
    std::vector<Parameter> buffers_;
    std::array<ConvLayer, 6> encoder_;
    std::array<BatchNormLayer, 6> encoder_bn_;
    std::array<DecoderLayers, 2> decoders_;
};

/// On/off state of every ReLU unit recorded in a forward pass.
std::vector<bool> relu_pattern(const ForwardResult& fwd);

/// Converts head logits to per-pixel softmax distributions.
ClassProbabilities softmax(const Tensor& logits, int sample);

/// Mean cross-entropy of logits against labels (one label plane per sample, row-major)
/// and its gradient w.r.t. the logits, scaled by weight.
double softmax_cross_entropy(const Tensor& logits, const std::vector<const std::uint8_t*>& labels, double weight,
                             Tensor* grad);

/// Loss on probabilities: w_f * CE(food) + w_p * CE(plate), each averaged over pixels; probabilities
/// are floored at 1e-12 before the log.
double loss(const ProbabilityMaps& pred, const LabelMap& gt_food, const LabelMap& gt_plate, double food_weight,
            double plate_weight);

/// Saves config, seed, parameters and running statistics with named keys.
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace mealscan::segnet
