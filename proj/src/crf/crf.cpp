#include "mealscan/crf/crf.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace mealscan::crf {

void CrfParams::validate() const {
    if (!(theta_alpha > 0 && theta_beta > 0 && theta_gamma > 0))
        throw Error(ErrorKind::validation, "crf bandwidths must be positive");
    if (!(w_appearance >= 0 && w_smoothness >= 0)) throw Error(ErrorKind::validation, "crf weights must be non-negative");
    if (iterations < 0) throw Error(ErrorKind::validation, "crf iterations must be non-negative");
    if (!(probability_floor > 0 && probability_floor < 1))
        throw Error(ErrorKind::validation, "crf probability floor must lie in (0, 1)");
}

namespace {

void check_shapes(const ClassProbabilities& unary, const ColorImage& color) {
    if (unary.width != color.width || unary.height != color.height)
        throw Error(ErrorKind::validation, fmt::format("crf shape mismatch: unaries {}x{}, color {}x{}", unary.width,
                                                       unary.height, color.width, color.height));
    if (unary.classes < 1) throw Error(ErrorKind::validation, "crf needs at least one class");
}

/// Pairwise kernel with the spatial factors tabulated by |dx|, |dy|.
class Kernel {
public:
    Kernel(const ColorImage& color, const CrfParams& p) : color_(color), w_a_(p.w_appearance), w_s_(p.w_smoothness) {
        width_ = color.width;
        height_ = color.height;
        radius_x_ = width_ - 1;
        radius_y_ = height_ - 1;
        if (p.truncate) {
            double theta = 0;
            if (w_a_ > 0) theta = std::max(theta, p.theta_alpha);
            if (w_s_ > 0) theta = std::max(theta, p.theta_gamma);
            const int r = int(std::ceil(3 * theta));
            radius_x_ = std::min(radius_x_, r);
            radius_y_ = std::min(radius_y_, r);
        }
        const int tw = radius_x_ + 1, th = radius_y_ + 1;
        spatial_a_.assign(std::size_t(tw) * th, 0.0);
        spatial_s_.assign(std::size_t(tw) * th, 0.0);
        for (int dy = 0; dy < th; ++dy)
            for (int dx = 0; dx < tw; ++dx) {
                const double d2 = double(dx) * dx + double(dy) * dy;
                spatial_a_[std::size_t(dy) * tw + dx] = w_a_ * std::exp(-d2 / (2 * p.theta_alpha * p.theta_alpha));
                spatial_s_[std::size_t(dy) * tw + dx] = w_s_ * std::exp(-d2 / (2 * p.theta_gamma * p.theta_gamma));
            }
        color_scale_ = 1.0 / (2 * p.theta_beta * p.theta_beta);
    }

    int radius_x() const { return radius_x_; }
    int radius_y() const { return radius_y_; }

    double operator()(int xi, int yi, int xj, int yj) const {
        const std::size_t t = std::size_t(std::abs(yi - yj)) * (radius_x_ + 1) + std::size_t(std::abs(xi - xj));
        double k = spatial_s_[t];
        if (w_a_ > 0) {
            const auto* a = color_.pixel(xi, yi);
            const auto* b = color_.pixel(xj, yj);
            const double dr = double(a[0]) - b[0], dg = double(a[1]) - b[1], db = double(a[2]) - b[2];
            k += spatial_a_[t] * std::exp(-(dr * dr + dg * dg + db * db) * color_scale_);
        }
        return k;
    }

private:
    const ColorImage& color_;
    double w_a_, w_s_;
    int width_ = 0, height_ = 0, radius_x_ = 0, radius_y_ = 0;
    std::vector<double> spatial_a_, spatial_s_;
    double color_scale_ = 0;
};

/// msg_i(l) = sum_{j != i in window} k(i, j) Q_j(l)
void message_at(const Kernel& kernel, const ClassProbabilities& q, int x, int y, double* msg) {
    const int c = q.classes;
    std::fill(msg, msg + c, 0.0);
    const int y0 = std::max(0, y - kernel.radius_y()), y1 = std::min(q.height - 1, y + kernel.radius_y());
    const int x0 = std::max(0, x - kernel.radius_x()), x1 = std::min(q.width - 1, x + kernel.radius_x());
    for (int yj = y0; yj <= y1; ++yj)
        for (int xj = x0; xj <= x1; ++xj) {
            if (xj == x && yj == y) continue;
            const double k = kernel(x, y, xj, yj);
            const double* qj = q.values.data() + (std::size_t(yj) * q.width + xj) * c;
            for (int l = 0; l < c; ++l) msg[l] += k * qj[l];
        }
}

/// Q_i = softmax(log p_i + msg_i); Potts messages penalize disagreement, i.e. reward k * Q_j(l).
void update_at(const double* log_unary, const double* msg, int classes, double* out) {
    double peak = -HUGE_VAL;
    for (int l = 0; l < classes; ++l) peak = std::max(peak, log_unary[l] + msg[l]);
    double sum = 0;
    for (int l = 0; l < classes; ++l) sum += (out[l] = std::exp(log_unary[l] + msg[l] - peak));
    for (int l = 0; l < classes; ++l) out[l] /= sum;
}

ClassProbabilities run(const ClassProbabilities& unary, const ColorImage& color, const CrfParams& params,
                       bool parallel) {
    params.validate();
    check_shapes(unary, color);
    const double norm_error = unary.normalization_error();
    if (norm_error < 0 || norm_error > 1e-5) throw Error(ErrorKind::validation, "crf unaries are not normalized");
    if (params.iterations == 0 || (params.w_appearance == 0 && params.w_smoothness == 0)) return unary;
    const std::size_t n = std::size_t(unary.width) * unary.height;
    if (!params.truncate && n > std::size_t(kMaxBruteForcePixels))
        throw Error(ErrorKind::validation,
                    fmt::format("brute-force crf limited to {} pixels ({}x{} given); enable truncation",
                                kMaxBruteForcePixels, unary.width, unary.height));

    const int c = unary.classes;
    std::vector<double> log_unary(unary.values.size());
    for (std::size_t i = 0; i < log_unary.size(); ++i)
        log_unary[i] = std::log(std::max(unary.values[i], params.probability_floor));

    const Kernel kernel(color, params);
    ClassProbabilities q = unary;
    ClassProbabilities next = unary;
    const int w = unary.width;
    const long total = long(n);
    for (int it = 0; it < params.iterations; ++it) {
        if (parallel) {
#pragma omp parallel
            {
                std::vector<double> msg(static_cast<std::size_t>(c));
#pragma omp for schedule(dynamic, 32)
                for (long i = 0; i < total; ++i) {
                    message_at(kernel, q, int(i % w), int(i / w), msg.data());
                    update_at(log_unary.data() + i * c, msg.data(), c, next.values.data() + i * c);
                }
            }
        } else {
            std::vector<double> msg(static_cast<std::size_t>(c));
            for (long i = 0; i < total; ++i) {
                message_at(kernel, q, int(i % w), int(i / w), msg.data());
                update_at(log_unary.data() + i * c, msg.data(), c, next.values.data() + i * c);
            }
        }
        std::swap(q, next);
    }
    return q;
}

}  // namespace

ClassProbabilities refine_crf(const ClassProbabilities& unary, const ColorImage& color, const CrfParams& params) {
    return run(unary, color, params, true);
}

ClassProbabilities refine_crf_reference(const ClassProbabilities& unary, const ColorImage& color,
                                        const CrfParams& params) {
    return run(unary, color, params, false);
}

double crf_energy(const LabelMap& labeling, const ClassProbabilities& unary, const ColorImage& color,
                  const CrfParams& params) {
    params.validate();
    check_shapes(unary, color);
    if (!labeling.labels.same_shape(unary.width, unary.height))
        throw Error(ErrorKind::validation, "crf energy: labeling and unaries differ in size");
    const int w = unary.width;
    const std::size_t n = std::size_t(w) * unary.height;
    double unary_energy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labeling.labels.data[i];
        if (y >= unary.classes) throw Error(ErrorKind::validation, fmt::format("label {} out of range", y));
        unary_energy -= std::log(std::max(unary.values[i * unary.classes + y], params.probability_floor));
    }
    CrfParams exact = params;
    exact.truncate = false;
    const Kernel kernel(color, exact);
    std::vector<double> rows(n, 0.0);
#pragma omp parallel for schedule(dynamic, 32)
    for (long i = 0; i < long(n); ++i) {
        const int xi = int(i % w), yi = int(i / w);
        const auto li = labeling.labels.data[std::size_t(i)];
        double row = 0;
        for (std::size_t j = std::size_t(i) + 1; j < n; ++j)
            if (labeling.labels.data[j] != li) row += kernel(xi, yi, int(j % w), int(j / w));
        rows[std::size_t(i)] = row;
    }
    double pairwise = 0;
    for (double r : rows) pairwise += r;
    return unary_energy + pairwise;
}

}  // namespace mealscan::crf
