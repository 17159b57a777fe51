
#include "mealscan/segnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "mealscan/core/random.hpp"

namespace mealscan::segnet {

namespace {

struct Span1D {
    int begin, end;
};

Span1D source_range(int i, int src, int dst) {
    if (src <= dst) {
        const int s = std::min(src - 1, int((long(i) * src) / dst));
        return {s, s + 1};
    }
    const int b = int((long(i) * src) / dst);
    const int e = std::max(b + 1, int((long(i + 1) * src) / dst));
    return {b, e};
}

Tensor batch_input(const std::vector<const Sample*>& samples, const std::vector<std::array<bool, 2>>& flips) {
    const Tensor& first = samples.front()->input;
    Tensor t(int(samples.size()), first.c, first.h, first.w);
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const Tensor& in = samples[n]->input;
        const bool lr = flips.empty() ? false : flips[n][0];
        const bool ud = flips.empty() ? false : flips[n][1];
        for (int c = 0; c < in.c; ++c)
            for (int y = 0; y < in.h; ++y)
                for (int x = 0; x < in.w; ++x)
                    t.at(int(n), c, y, x) = in.at(0, c, ud ? in.h - 1 - y : y, lr ? in.w - 1 - x : x);
    }
    return t;
}

std::vector<std::uint8_t> flip_labels(const Image<std::uint8_t>& img, bool lr, bool ud) {
    std::vector<std::uint8_t> out(img.size());
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out[std::size_t(y) * img.width + x] = img(lr ? img.width - 1 - x : x, ud ? img.height - 1 - y : y);
    return out;
}

struct LabelBatch {
    std::vector<std::vector<std::uint8_t>> food, plate;
    std::vector<const std::uint8_t*> food_ptr, plate_ptr;
};

LabelBatch batch_labels(const std::vector<const Sample*>& samples, const std::vector<std::array<bool, 2>>& flips) {
    LabelBatch b;
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const bool lr = flips.empty() ? false : flips[n][0];
        const bool ud = flips.empty() ? false : flips[n][1];
        b.food.push_back(flip_labels(samples[n]->food, lr, ud));
        b.plate.push_back(flip_labels(samples[n]->plate, lr, ud));
    }
    for (std::size_t n = 0; n < samples.size(); ++n) {
        b.food_ptr.push_back(b.food[n].data());
        b.plate_ptr.push_back(b.plate[n].data());
    }
    return b;
}

double batch_loss(Network& net, const std::vector<const Sample*>& samples, const std::vector<std::array<bool, 2>>& flips,
                  Mode mode, bool update, double wf, double wp, Gradients* grads,
                  std::vector<bool>* pattern = nullptr) {
    const Tensor input = batch_input(samples, flips);
    const LabelBatch labels = batch_labels(samples, flips);
    auto fwd = net.forward(input, mode, update);
    Tensor gf, gp;
    const double lf = softmax_cross_entropy(fwd.food_logits, labels.food_ptr, wf, grads ? &gf : nullptr);
    const double lp = softmax_cross_entropy(fwd.plate_logits, labels.plate_ptr, wp, grads ? &gp : nullptr);
    if (grads) net.backward(fwd, gf, gp, *grads);
    if (pattern) *pattern = relu_pattern(fwd);
    return lf + lp;
}

std::vector<const Sample*> pointers(const std::vector<Sample>& samples) {
    std::vector<const Sample*> out;
    for (const auto& s : samples) out.push_back(&s);
    return out;
}

}  // namespace

Image<std::uint8_t> resize_labels(const Image<std::uint8_t>& labels, int width, int height, int classes) {
    if (labels.same_shape(width, height)) return labels;
    Image<std::uint8_t> out(width, height);
    std::vector<int> votes(std::size_t(std::max(classes, 256)));
    for (int y = 0; y < height; ++y) {
        const auto ry = source_range(y, labels.height, height);
        for (int x = 0; x < width; ++x) {
            const auto rx = source_range(x, labels.width, width);
            std::fill(votes.begin(), votes.end(), 0);
            for (int sy = ry.begin; sy < ry.end; ++sy)
                for (int sx = rx.begin; sx < rx.end; ++sx) ++votes[labels(sx, sy)];
            out(x, y) = std::uint8_t(std::max_element(votes.begin(), votes.end()) - votes.begin());
        }
    }
    return out;
}

Tensor make_input(const RgbdFrame& frame, const NetworkConfig& config) {
    const int h = config.input_height, w = config.input_width;
    Tensor t(1, kInputChannels, h, w);
    for (int y = 0; y < h; ++y) {
        const auto ry = source_range(y, frame.height(), h);
        for (int x = 0; x < w; ++x) {
            const auto rx = source_range(x, frame.width(), w);
            double rgb[3] = {0, 0, 0};
            double depth = 0;
            int count = 0, valid = 0;
            for (int sy = ry.begin; sy < ry.end; ++sy)
                for (int sx = rx.begin; sx < rx.end; ++sx) {
                    const auto* px = frame.color.pixel(sx, sy);
                    for (int c = 0; c < 3; ++c) rgb[c] += px[c];
                    ++count;
                    if (frame.valid_depth(sx, sy)) {
                        depth += frame.depth(sx, sy);
                        ++valid;
                    }
                }
            for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = rgb[c] / count / 255.0;
            t.at(0, 3, y, x) = valid ? depth / valid / config.depth_scale_m : 0.0;
        }
    }
    return t;
}

Sample make_sample(const RgbdFrame& frame, const LabelMap& food, const LabelMap& plate, const NetworkConfig& config) {
    if (!food.labels.same_shape(frame.width(), frame.height()) || !plate.labels.same_shape(frame.width(), frame.height()))
        throw Error(ErrorKind::validation, "annotation size differs from frame size");
    return {make_input(frame, config),
            resize_labels(food.labels, config.input_width, config.input_height, kFoodClasses),
            resize_labels(plate.labels, config.input_width, config.input_height, kPlateClasses)};
}

ProbabilityMaps predict(Network& net, const RgbdFrame& frame) {
    auto fwd = net.forward(make_input(frame, net.config()), Mode::inference);
    return {softmax(fwd.food_logits, 0), softmax(fwd.plate_logits, 0)};
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0) || batch_size <= 0 || max_epochs < 0 || early_stop_patience <= 0)
        throw Error(ErrorKind::validation, "training hyper-parameters must be positive");
    if (food_loss_weight < 0 || plate_loss_weight < 0) throw Error(ErrorKind::validation, "loss weights must be >= 0");
}

bool EarlyStopping::update(int epoch, double loss) {
    improved_last_ = !has_best_ || loss < best_loss_;
    if (improved_last_) {
        has_best_ = true;
        best_loss_ = loss;
        best_epoch_ = epoch;
        since_best_ = 0;
        return false;
    }
    return ++since_best_ >= patience_;
}

Adam::Adam(const Network& net, const TrainConfig& cfg)
    : lr_(cfg.learning_rate), beta1_(cfg.adam_beta1), beta2_(cfg.adam_beta2), eps_(cfg.adam_epsilon),
      m_(net.zero_gradients()), v_(net.zero_gradients()) {}

void Adam::step(Network& net, const Gradients& grads) {
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, double(step_));
    const double c2 = 1.0 - std::pow(beta2_, double(step_));
    auto& params = net.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& value = params[p].value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grads[p][i];
            m_[p][i] = beta1_ * m_[p][i] + (1 - beta1_) * g;
            v_[p][i] = beta2_ * v_[p][i] + (1 - beta2_) * g * g;
            value[i] -= lr_ * (m_[p][i] / c1) / (std::sqrt(v_[p][i] / c2) + eps_);
        }
    }
}

double evaluate_loss(Network& net, const std::vector<Sample>& samples, double food_weight, double plate_weight) {
    if (samples.empty()) return 0;
    const auto ptrs = pointers(samples);
    double total = 0;
    constexpr std::size_t chunk = 8;
    for (std::size_t i = 0; i < ptrs.size(); i += chunk) {
        std::vector<const Sample*> part(ptrs.begin() + std::ptrdiff_t(i),
                                        ptrs.begin() + std::ptrdiff_t(std::min(ptrs.size(), i + chunk)));
        total += batch_loss(net, part, {}, Mode::inference, false, food_weight, plate_weight, nullptr) *
                 double(part.size());
    }
    return total / double(ptrs.size());
}

PixelAccuracy pixel_accuracy(Network& net, const std::vector<Sample>& samples) {
    std::size_t food_ok = 0, plate_ok = 0, total = 0;
    for (const auto& s : samples) {
        auto fwd = net.forward(s.input, Mode::inference);
        const auto food = softmax(fwd.food_logits, 0).argmax(LabelDomain::food);
        const auto plate = softmax(fwd.plate_logits, 0).argmax(LabelDomain::plate);
        for (std::size_t i = 0; i < s.food.size(); ++i) {
            food_ok += food.labels.data[i] == s.food.data[i];
            plate_ok += plate.labels.data[i] == s.plate.data[i];
        }
        total += s.food.size();
    }
    if (total == 0) return {};
    return {double(food_ok) / double(total), double(plate_ok) / double(total)};
}

TrainResult train(Network& net, const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                  const TrainConfig& cfg, std::uint64_t seed, const std::function<void(const EpochRecord&)>& on_epoch) {
    cfg.validate();
    if (train_set.empty() || val_set.empty()) throw Error(ErrorKind::validation, "training and validation sets must be non-empty");
    Rng rng(seed);
    Adam adam(net, cfg);
    EarlyStopping stopper(cfg.early_stop_patience);
    TrainResult result;
    result.initial_val_loss = evaluate_loss(net, val_set, cfg.food_loss_weight, cfg.plate_loss_weight);
    if (!std::isfinite(result.initial_val_loss)) throw Error(ErrorKind::training, "initial validation loss is not finite");

    const auto initial_params = net.parameters();
    const auto initial_buffers = net.buffers();
    auto best_params = initial_params;
    auto best_buffers = initial_buffers;
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + std::size_t(cfg.batch_size));
            std::vector<const Sample*> batch;
            std::vector<std::array<bool, 2>> flips;
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(&train_set[order[i]]);
                const bool lr = cfg.flip_augmentation && rng.bernoulli(0.5);
                const bool ud = cfg.flip_augmentation && rng.bernoulli(0.5);
                flips.push_back({lr, ud});
            }
            auto grads = net.zero_gradients();
            const double l = batch_loss(net, batch, flips, Mode::train, true, cfg.food_loss_weight,
                                        cfg.plate_loss_weight, &grads);
            if (!std::isfinite(l))
                throw Error(ErrorKind::training, fmt::format("training diverged: non-finite loss at epoch {}", epoch));
            adam.step(net, grads);
            epoch_loss += l * double(batch.size());
        }
        EpochRecord record{epoch, epoch_loss / double(order.size()),
                           evaluate_loss(net, val_set, cfg.food_loss_weight, cfg.plate_loss_weight)};
        if (!std::isfinite(record.val_loss))
            throw Error(ErrorKind::training, fmt::format("training diverged: non-finite validation loss at epoch {}", epoch));
        result.history.push_back(record);
        if (on_epoch) on_epoch(record);
        const bool stop = stopper.update(epoch, record.val_loss);
        if (stopper.improved_last()) {
            best_params = net.parameters();
            best_buffers = net.buffers();
        }
        if (stop) {
            result.stopped_early = true;
            break;
        }
    }
    // Early stopping counts from epoch 1, but no epoch is kept unless it beat the starting point.
    if (result.history.empty() || !(stopper.best_loss() < result.initial_val_loss)) {
        net.parameters() = initial_params;
        net.buffers() = initial_buffers;
        result.best_epoch = 0;
    } else {
        net.parameters() = best_params;
        net.buffers() = best_buffers;
        result.best_epoch = stopper.best_epoch();
    }
    return result;
}

double loss_and_gradients(Network& net, const std::vector<Sample>& batch, double food_weight, double plate_weight,
                          Gradients& grads) {
    return batch_loss(net, pointers(batch), {}, Mode::train, false, food_weight, plate_weight, &grads);
}

GradientCheckResult gradient_check(Network& net, const std::vector<Sample>& batch, double epsilon,
                                   std::size_t parameter_count, std::uint64_t seed) {
    auto grads = net.zero_gradients();
    loss_and_gradients(net, batch, 1.0, 1.0, grads);

    std::vector<std::pair<std::size_t, std::size_t>> bn, other;
    auto& params = net.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        const bool is_bn = params[p].name.find(".bn.") != std::string::npos;
        for (std::size_t i = 0; i < params[p].value.size(); ++i) (is_bn ? bn : other).emplace_back(p, i);
    }
    Rng rng(seed);
    rng.shuffle(bn);
    rng.shuffle(other);
    const std::size_t bn_want = std::min(bn.size(), std::max<std::size_t>(10, parameter_count / 5));
    const std::size_t other_want = parameter_count > bn_want ? parameter_count - bn_want : 0;

    const auto ptrs = pointers(batch);
    GradientCheckResult result;
    // A perturbation that switches a ReLU on or off straddles a kink, where central differences do not
    // estimate the derivative; such coordinates are replaced by the next candidate.
    auto check = [&](const std::pair<std::size_t, std::size_t>& at) {
        const auto [p, i] = at;
        double& value = params[p].value[i];
        const double saved = value;
        std::vector<bool> pattern_up, pattern_down;
        value = saved + epsilon;
        const double up = batch_loss(net, ptrs, {}, Mode::train, false, 1.0, 1.0, nullptr, &pattern_up);
        value = saved - epsilon;
        const double down = batch_loss(net, ptrs, {}, Mode::train, false, 1.0, 1.0, nullptr, &pattern_down);
        value = saved;
        if (pattern_up != pattern_down) {
            ++result.skipped_at_kink;
            return false;
        }
        const double numeric = (up - down) / (2 * epsilon);
        const double analytic = grads[p][i];
        const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradientCheckFloor});
        result.max_relative_error = std::max(result.max_relative_error, std::abs(analytic - numeric) / denom);
        result.max_abs_gradient = std::max(result.max_abs_gradient, std::abs(analytic));
        ++result.checked;
        return true;
    };
    for (std::size_t k = 0; k < bn.size() && result.batch_norm_checked < bn_want; ++k)
        if (check(bn[k])) ++result.batch_norm_checked;
    std::size_t others = 0;
    for (std::size_t k = 0; k < other.size() && others < other_want; ++k)
        if (check(other[k])) ++others;
    return result;
}

}  // namespace mealscan::segnet
