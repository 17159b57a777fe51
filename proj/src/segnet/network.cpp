#include "mealscan/segnet/network.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "mealscan/core/random.hpp"

namespace mealscan::segnet {

NetworkConfig NetworkConfig::table_widths() {
    NetworkConfig c;
    c.encoder_filters = {16, 32, 64, 128, 256, 512};
    return c;
}

NetworkConfig NetworkConfig::scaled(double width_factor) {
    NetworkConfig c = table_widths();
    for (int& f : c.encoder_filters) f = std::max(1, int(std::lround(f * width_factor)));
    return c;
}

void NetworkConfig::validate() const {
    if (input_height <= 0 || input_width <= 0 || input_height % 32 != 0 || input_width % 32 != 0)
        throw Error(ErrorKind::validation,
                    fmt::format("input size {}x{} must be positive and divisible by 32", input_height, input_width));
    for (int f : encoder_filters)
        if (f <= 0) throw Error(ErrorKind::validation, "filter counts must be positive");
    if (food_classes != kFoodClasses || plate_classes != kPlateClasses)
        throw Error(ErrorKind::validation, "head widths are fixed at 8 food and 6 plate classes");
    if (kernel_size <= 0 || kernel_size % 2 == 0) throw Error(ErrorKind::validation, "kernel size must be odd");
    if (!(depth_scale_m > 0)) throw Error(ErrorKind::validation, "depth scale must be positive");
}

// ---------------------------------------------------------------------------------------------
// Tape

struct ForwardResult::Tape {
    enum class Kind { conv, deconv, batch_norm, relu, concat, bias };
    struct Node {
        explicit Node(Kind k) : kind(k) {}
        Kind kind;
        int in0 = -1, in1 = -1, out = -1;
        const ConvLayer* conv = nullptr;
        const BatchNormLayer* bn = nullptr;
        kernels::ConvGeometry geometry;
        std::vector<double> mean, inv_std;  // batch norm statistics used in the forward pass
    };
    Mode mode = Mode::inference;
    std::vector<Tensor> values;
    std::vector<Node> nodes;
    int food_out = -1, plate_out = -1;
};

namespace {

using Tape = ForwardResult::Tape;

int push_value(Tape& tape, Tensor t) {
    tape.values.push_back(std::move(t));
    return int(tape.values.size()) - 1;
}

int apply_conv(Tape& tape, const std::vector<Parameter>& params, const ConvLayer& layer, int in) {
    const Tensor& x = tape.values[in];
    Tape::Node node(layer.transposed ? Tape::Kind::deconv : Tape::Kind::conv);
    node.in0 = in;
    node.conv = &layer;
    Tensor y;
    if (!layer.transposed) {
        node.geometry = kernels::ConvGeometry::same(x.c, x.h, x.w, layer.out_c, layer.kernel, layer.stride);
        y = Tensor(x.n, layer.out_c, node.geometry.out_h, node.geometry.out_w);
        kernels::conv_forward(node.geometry, x.n, x.v.data(), params[layer.weight].value.data(), y.v.data());
    } else {
        // Output doubles the resolution: the adjoint conv maps (2h, 2w) down to (h, w).
        node.geometry = kernels::ConvGeometry::same(layer.out_c, x.h * layer.stride, x.w * layer.stride, x.c,
                                                    layer.kernel, layer.stride);
        y = Tensor(x.n, layer.out_c, node.geometry.in_h, node.geometry.in_w);
        kernels::deconv_forward(node.geometry, x.n, x.v.data(), params[layer.weight].value.data(), y.v.data());
    }
    node.out = push_value(tape, std::move(y));
    tape.nodes.push_back(std::move(node));
    if (layer.bias < 0) return tape.nodes.back().out;

    Tape::Node bias(Tape::Kind::bias);
    bias.in0 = tape.nodes.back().out;
    bias.conv = &layer;
    Tensor z = tape.values[bias.in0];
    const auto& b = params[layer.bias].value;
    const std::size_t plane = std::size_t(z.h) * z.w;
    for (int n = 0; n < z.n; ++n)
        for (int c = 0; c < z.c; ++c) {
            double* p = z.sample(n) + c * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] += b[c];
        }
    bias.out = push_value(tape, std::move(z));
    tape.nodes.push_back(std::move(bias));
    return tape.nodes.back().out;
}

int apply_batch_norm(Tape& tape, std::vector<Parameter>& params, std::vector<Parameter>& buffers,
                     const BatchNormLayer& layer, int in, Mode mode, bool update, double momentum, double eps) {
    const Tensor& x = tape.values[in];
    Tape::Node node(Tape::Kind::batch_norm);
    node.in0 = in;
    node.bn = &layer;
    node.mean.resize(x.c);
    node.inv_std.resize(x.c);
    Tensor y(x.n, x.c, x.h, x.w);
    const std::size_t plane = std::size_t(x.h) * x.w;
    const double count = double(plane) * x.n;
    auto& running_mean = buffers[layer.running_mean].value;
    auto& running_var = buffers[layer.running_var].value;
    const auto& gamma = params[layer.gamma].value;
    const auto& beta = params[layer.beta].value;
#pragma omp parallel for schedule(static)
    for (int c = 0; c < x.c; ++c) {
        double mean, var;
        if (mode == Mode::train) {
            double sum = 0;
            for (int n = 0; n < x.n; ++n) {
                const double* p = x.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            mean = sum / count;
            double sq = 0;
            for (int n = 0; n < x.n; ++n) {
                const double* p = x.sample(n) + c * plane;
                for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
            }
            var = sq / count;
            if (update) {
                const double unbiased = count > 1 ? sq / (count - 1) : var;
                running_mean[c] = momentum * running_mean[c] + (1 - momentum) * mean;
                running_var[c] = momentum * running_var[c] + (1 - momentum) * unbiased;
            }
        } else {
            mean = running_mean[c];
            var = running_var[c];
        }
        const double inv = 1.0 / std::sqrt(var + eps);
        node.mean[c] = mean;
        node.inv_std[c] = inv;
        for (int n = 0; n < x.n; ++n) {
            const double* p = x.sample(n) + c * plane;
            double* q = y.sample(n) + c * plane;
            for (std::size_t i = 0; i < plane; ++i) q[i] = gamma[c] * (p[i] - mean) * inv + beta[c];
        }
    }
    node.out = push_value(tape, std::move(y));
    tape.nodes.push_back(std::move(node));
    return tape.nodes.back().out;
}

int apply_relu(Tape& tape, int in) {
    Tensor y = tape.values[in];
    for (double& v : y.v) v = std::max(v, 0.0);
    Tape::Node node(Tape::Kind::relu);
    node.in0 = in;
    node.out = push_value(tape, std::move(y));
    tape.nodes.push_back(std::move(node));
    return tape.nodes.back().out;
}

int apply_concat(Tape& tape, int a, int b) {
    const Tensor& x = tape.values[a];
    const Tensor& s = tape.values[b];
    Tensor y(x.n, x.c + s.c, x.h, x.w);
    for (int n = 0; n < x.n; ++n) {
        std::copy_n(x.sample(n), x.sample_size(), y.sample(n));
        std::copy_n(s.sample(n), s.sample_size(), y.sample(n) + x.sample_size());
    }
    Tape::Node node(Tape::Kind::concat);
    node.in0 = a;
    node.in1 = b;
    node.out = push_value(tape, std::move(y));
    tape.nodes.push_back(std::move(node));
    return tape.nodes.back().out;
}

void add_into(Tensor& dst, const Tensor& src) {
    if (dst.v.empty()) {
        dst = src;
        return;
    }
    for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Network

Network::Network(const NetworkConfig& config, std::uint64_t seed) : config_(config), seed_(seed) {
    config_.validate();
    const int k = config_.kernel_size;
    const auto& f = config_.encoder_filters;
    int in_c = kInputChannels;
    for (int i = 0; i < 6; ++i) {
        const std::string name = fmt::format("enc{}", i + 1);
        encoder_[i] = make_conv(name, in_c, f[i], k, kEncoderStrides[i], false, false);
        encoder_bn_[i] = make_bn(name, f[i]);
        in_c = f[i];
    }
    const std::array<const char*, 2> prefixes{"food", "plate"};
    const std::array<int, 2> classes{config_.food_classes, config_.plate_classes};
    for (int d = 0; d < 2; ++d) {
        auto& dec = decoders_[d];
        int channels = f[5];
        for (int s = 0; s < 5; ++s) {
            const int width = f[5 - s];
            const std::string dc = fmt::format("{}.dc{}", prefixes[d], s + 1);
            dec.deconv[s] = make_conv(dc, channels, width, k, 2, true, false);
            dec.deconv_bn[s] = make_bn(dc, width);
            channels = width;
            if (s < 4) {
                // Skip source: encoder stage whose output has this decoder stage's resolution.
                const int skip_channels = f[3 - s];
                const std::string scc = fmt::format("{}.scc{}", prefixes[d], s + 1);
                dec.skip_conv[s] = make_conv(scc, channels + skip_channels, width, k, 1, false, false);
                dec.skip_bn[s] = make_bn(scc, width);
            }
        }
        dec.head = make_conv(fmt::format("{}.head", prefixes[d]), channels, classes[d], 1, 1, false, true);
    }
    initialize(seed);
}

int Network::add_param(std::string name, std::vector<int> shape) {
    std::size_t size = 1;
    for (int s : shape) size *= std::size_t(s);
    params_.push_back({std::move(name), std::move(shape), std::vector<double>(size, 0.0)});
    return int(params_.size()) - 1;
}

int Network::add_buffer(std::string name, int size, double fill) {
    buffers_.push_back({std::move(name), {size}, std::vector<double>(std::size_t(size), fill)});
    return int(buffers_.size()) - 1;
}

ConvLayer Network::make_conv(const std::string& name, int in_c, int out_c, int kernel, int stride, bool transposed,
                             bool bias) {
    ConvLayer layer;
    layer.in_c = in_c;
    layer.out_c = out_c;
    layer.kernel = kernel;
    layer.stride = stride;
    layer.transposed = transposed;
    // Conv weights are [out][in][k][k]; deconv weights [in][out][k][k].
    layer.weight = transposed ? add_param(name + ".weight", {in_c, out_c, kernel, kernel})
                              : add_param(name + ".weight", {out_c, in_c, kernel, kernel});
    if (bias) layer.bias = add_param(name + ".bias", {out_c});
    return layer;
}

BatchNormLayer Network::make_bn(const std::string& name, int channels) {
    BatchNormLayer bn;
    bn.channels = channels;
    bn.gamma = add_param(name + ".bn.gamma", {channels});
    bn.beta = add_param(name + ".bn.beta", {channels});
    bn.running_mean = add_buffer(name + ".bn.running_mean", channels, 0.0);
    bn.running_var = add_buffer(name + ".bn.running_var", channels, 1.0);
    return bn;
}

void Network::initialize(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& p : params_) {
        const bool is_gamma = p.name.ends_with(".gamma");
        const bool is_vector = p.shape.size() == 1;
        if (is_gamma) {
            std::fill(p.value.begin(), p.value.end(), 1.0);
        } else if (is_vector) {
            std::fill(p.value.begin(), p.value.end(), 0.0);
        } else {
            const bool head = p.name.find(".head.") != std::string::npos;
            const int fan_in = p.shape[1] * p.shape[2] * p.shape[3];
            const int deconv_fan = p.shape[0] * p.shape[2] * p.shape[3];
            const bool transposed = p.name.find(".dc") != std::string::npos;
            const double fan = transposed ? deconv_fan : fan_in;
            const double stddev = std::sqrt((head ? 1.0 : 2.0) / fan);
            for (double& v : p.value) v = rng.normal(0.0, stddev);
        }
    }
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

Gradients Network::zero_gradients() const {
    Gradients g;
    g.reserve(params_.size());
    for (const auto& p : params_) g.emplace_back(p.value.size(), 0.0);
    return g;
}

ForwardResult Network::forward(const Tensor& input, Mode mode, bool update_running_stats) {
    if (input.c != kInputChannels || input.h != config_.input_height || input.w != config_.input_width)
        throw Error(ErrorKind::validation,
                    fmt::format("network expects Nx{}x{}x{} input, got Nx{}x{}x{}", kInputChannels,
                                config_.input_height, config_.input_width, input.c, input.h, input.w));
    auto tape = std::make_shared<Tape>();
    tape->mode = mode;
    const bool update = mode == Mode::train && update_running_stats;
    const double momentum = config_.bn_momentum, eps = config_.bn_epsilon;
    int x = push_value(*tape, input);
    std::array<int, 6> encoded{};
    for (int i = 0; i < 6; ++i) {
        x = apply_conv(*tape, params_, encoder_[i], x);
        x = apply_batch_norm(*tape, params_, buffers_, encoder_bn_[i], x, mode, update, momentum, eps);
        x = apply_relu(*tape, x);
        encoded[i] = x;
    }
    std::array<int, 2> outs{};
    for (int d = 0; d < 2; ++d) {
        const auto& dec = decoders_[d];
        int y = encoded[5];
        for (int s = 0; s < 5; ++s) {
            y = apply_conv(*tape, params_, dec.deconv[s], y);
            y = apply_batch_norm(*tape, params_, buffers_, dec.deconv_bn[s], y, mode, update, momentum, eps);
            y = apply_relu(*tape, y);
            if (s < 4) {
                y = apply_concat(*tape, y, encoded[3 - s]);
                y = apply_conv(*tape, params_, dec.skip_conv[s], y);
                y = apply_batch_norm(*tape, params_, buffers_, dec.skip_bn[s], y, mode, update, momentum, eps);
                y = apply_relu(*tape, y);
            }
        }
        outs[d] = apply_conv(*tape, params_, dec.head, y);
    }
    tape->food_out = outs[0];
    tape->plate_out = outs[1];
    ForwardResult result;
    result.food_logits = tape->values[outs[0]];
    result.plate_logits = tape->values[outs[1]];
    result.tape = std::move(tape);
    return result;
}

void Network::backward(const ForwardResult& fwd, const Tensor& food_grad, const Tensor& plate_grad,
                       Gradients& grads) const {
    const Tape& tape = *fwd.tape;
    std::vector<Tensor> dv(tape.values.size());
    dv[tape.food_out] = food_grad;
    dv[tape.plate_out] = plate_grad;

    for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
        const auto& node = *it;
        const Tensor& dy = dv[node.out];
        if (dy.v.empty()) continue;
        const Tensor& x = tape.values[node.in0];
        switch (node.kind) {
            case Tape::Kind::conv:
            case Tape::Kind::deconv: {
                const bool need_input = node.in0 != 0;
                Tensor dx;
                if (need_input) dx = Tensor(x.n, x.c, x.h, x.w);
                const auto& w = params_[node.conv->weight].value;
                auto& dw = grads[node.conv->weight];
                if (node.kind == Tape::Kind::conv)
                    kernels::conv_backward(node.geometry, x.n, x.v.data(), dy.v.data(), w.data(),
                                           need_input ? dx.v.data() : nullptr, dw.data());
                else
                    kernels::deconv_backward(node.geometry, x.n, x.v.data(), dy.v.data(), w.data(),
                                             need_input ? dx.v.data() : nullptr, dw.data());
                if (need_input) add_into(dv[node.in0], dx);
                break;
            }
            case Tape::Kind::bias: {
                auto& db = grads[node.conv->bias];
                const std::size_t plane = std::size_t(dy.h) * dy.w;
                for (int n = 0; n < dy.n; ++n)
                    for (int c = 0; c < dy.c; ++c) {
                        const double* p = dy.sample(n) + c * plane;
                        double sum = 0;
                        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
                        db[c] += sum;
                    }
                add_into(dv[node.in0], dy);
                break;
            }
            case Tape::Kind::batch_norm: {
                const auto& gamma = params_[node.bn->gamma].value;
                auto& dgamma = grads[node.bn->gamma];
                auto& dbeta = grads[node.bn->beta];
                Tensor dx(x.n, x.c, x.h, x.w);
                const std::size_t plane = std::size_t(x.h) * x.w;
                const double count = double(plane) * x.n;
#pragma omp parallel for schedule(static)
                for (int c = 0; c < x.c; ++c) {
                    const double mean = node.mean[c], inv = node.inv_std[c];
                    double sum_dy = 0, sum_dy_xhat = 0;
                    for (int n = 0; n < x.n; ++n) {
                        const double* px = x.sample(n) + c * plane;
                        const double* pd = dy.sample(n) + c * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            sum_dy += pd[i];
                            sum_dy_xhat += pd[i] * (px[i] - mean) * inv;
                        }
                    }
                    dgamma[c] += sum_dy_xhat;
                    dbeta[c] += sum_dy;
                    for (int n = 0; n < x.n; ++n) {
                        const double* px = x.sample(n) + c * plane;
                        const double* pd = dy.sample(n) + c * plane;
                        double* pdx = dx.sample(n) + c * plane;
                        for (std::size_t i = 0; i < plane; ++i) {
                            if (tape.mode == Mode::train) {
                                const double xhat = (px[i] - mean) * inv;
                                pdx[i] = gamma[c] * inv * (pd[i] - sum_dy / count - xhat * sum_dy_xhat / count);
                            } else {
                                pdx[i] = gamma[c] * inv * pd[i];
                            }
                        }
                    }
                }
                add_into(dv[node.in0], dx);
                break;
            }
            case Tape::Kind::relu: {
                Tensor dx = dy;
                const Tensor& y = tape.values[node.out];
                for (std::size_t i = 0; i < dx.v.size(); ++i)
                    if (!(y.v[i] > 0)) dx.v[i] = 0;
                add_into(dv[node.in0], dx);
                break;
            }
            case Tape::Kind::concat: {
                const Tensor& b = tape.values[node.in1];
                Tensor da(x.n, x.c, x.h, x.w), db(b.n, b.c, b.h, b.w);
                for (int n = 0; n < x.n; ++n) {
                    std::copy_n(dy.sample(n), x.sample_size(), da.sample(n));
                    std::copy_n(dy.sample(n) + x.sample_size(), b.sample_size(), db.sample(n));
                }
                add_into(dv[node.in0], da);
                add_into(dv[node.in1], db);
                break;
            }
        }
        dv[node.out] = Tensor();  // release
    }
}

std::vector<bool> relu_pattern(const ForwardResult& fwd) {
    std::vector<bool> out;
    for (const auto& node : fwd.tape->nodes) {
        if (node.kind != Tape::Kind::relu) continue;
        for (double v : fwd.tape->values[node.out].v) out.push_back(v > 0);
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Softmax / loss

ClassProbabilities softmax(const Tensor& logits, int sample) {
    ClassProbabilities out(logits.w, logits.h, logits.c);
    const std::size_t plane = std::size_t(logits.h) * logits.w;
    const double* base = logits.sample(sample);
    for (std::size_t p = 0; p < plane; ++p) {
        double peak = base[p];
        for (int c = 1; c < logits.c; ++c) peak = std::max(peak, base[c * plane + p]);
        double sum = 0;
        auto dst = out.at(p);
        for (int c = 0; c < logits.c; ++c) {
            dst[c] = std::exp(base[c * plane + p] - peak);
            sum += dst[c];
        }
        for (int c = 0; c < logits.c; ++c) dst[c] /= sum;
    }
    return out;
}

double softmax_cross_entropy(const Tensor& logits, const std::vector<const std::uint8_t*>& labels, double weight,
                             Tensor* grad) {
    const std::size_t plane = std::size_t(logits.h) * logits.w;
    const double count = double(plane) * logits.n;
    if (grad) *grad = Tensor(logits.n, logits.c, logits.h, logits.w);
    double total = 0;
    std::vector<double> e(logits.c);
    for (int n = 0; n < logits.n; ++n) {
        const double* base = logits.sample(n);
        for (std::size_t p = 0; p < plane; ++p) {
            double peak = base[p];
            for (int c = 1; c < logits.c; ++c) peak = std::max(peak, base[c * plane + p]);
            double sum = 0;
            for (int c = 0; c < logits.c; ++c) {
                e[c] = std::exp(base[c * plane + p] - peak);
                sum += e[c];
            }
            const int label = labels[n][p];
            total += -(base[label * plane + p] - peak - std::log(sum));
            if (grad) {
                double* g = grad->sample(n);
                for (int c = 0; c < logits.c; ++c)
                    g[c * plane + p] = weight * (e[c] / sum - (c == label ? 1.0 : 0.0)) / count;
            }
        }
    }
    return weight * total / count;
}

double loss(const ProbabilityMaps& pred, const LabelMap& gt_food, const LabelMap& gt_plate, double food_weight,
            double plate_weight) {
    auto ce = [](const ClassProbabilities& p, const LabelMap& gt) {
        if (!gt.labels.same_shape(p.width, p.height))
            throw Error(ErrorKind::validation, "prediction and ground truth differ in size");
        double total = 0;
        for (std::size_t i = 0; i < p.pixels(); ++i) {
            const int label = gt.labels.data[i];
            if (label >= p.classes) throw Error(ErrorKind::validation, "label outside prediction classes");
            total += -std::log(std::max(p.at(i)[label], 1e-12));
        }
        return total / double(p.pixels());
    };
    return food_weight * ce(pred.food, gt_food) + plate_weight * ce(pred.plate, gt_plate);
}

}  // namespace mealscan::segnet
