#include "mealscan/segnet/kernels.hpp"

#include <algorithm>
#include <vector>

#include <Eigen/Core>

namespace mealscan::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

}  // namespace

ConvGeometry ConvGeometry::same(int in_c, int in_h, int in_w, int out_c, int kernel, int stride) {
    ConvGeometry g;
    g.in_c = in_c;
    g.in_h = in_h;
    g.in_w = in_w;
    g.out_c = out_c;
    g.kernel = kernel;
    g.stride = stride;
    g.pad = kernel / 2;
    g.out_h = (in_h + 2 * g.pad - kernel) / stride + 1;
    g.out_w = (in_w + 2 * g.pad - kernel) / stride + 1;
    return g;
}

void conv_forward_reference(const ConvGeometry& g, const double* in, const double* weight, double* out) {
    const int k = g.kernel;
    for (int o = 0; o < g.out_c; ++o)
        for (int y = 0; y < g.out_h; ++y)
            for (int x = 0; x < g.out_w; ++x) {
                double acc = 0;
                for (int c = 0; c < g.in_c; ++c)
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = y * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.in_h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = x * g.stride - g.pad + kx;
                            if (ix < 0 || ix >= g.in_w) continue;
                            acc += weight[((o * g.in_c + c) * k + ky) * k + kx] * in[(c * g.in_h + iy) * g.in_w + ix];
                        }
                    }
                out[(o * g.out_h + y) * g.out_w + x] = acc;
            }
}

void conv_backward_data_reference(const ConvGeometry& g, const double* dout, const double* weight, double* din) {
    const int k = g.kernel;
    std::fill(din, din + std::size_t(g.in_c) * g.in_pixels(), 0.0);
    for (int o = 0; o < g.out_c; ++o)
        for (int y = 0; y < g.out_h; ++y)
            for (int x = 0; x < g.out_w; ++x) {
                const double d = dout[(o * g.out_h + y) * g.out_w + x];
                for (int c = 0; c < g.in_c; ++c)
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = y * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.in_h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = x * g.stride - g.pad + kx;
                            if (ix < 0 || ix >= g.in_w) continue;
                            din[(c * g.in_h + iy) * g.in_w + ix] += weight[((o * g.in_c + c) * k + ky) * k + kx] * d;
                        }
                    }
            }
}

void conv_backward_weight_reference(const ConvGeometry& g, const double* in, const double* dout, double* dweight) {
    const int k = g.kernel;
    for (int o = 0; o < g.out_c; ++o)
        for (int y = 0; y < g.out_h; ++y)
            for (int x = 0; x < g.out_w; ++x) {
                const double d = dout[(o * g.out_h + y) * g.out_w + x];
                for (int c = 0; c < g.in_c; ++c)
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = y * g.stride - g.pad + ky;
                        if (iy < 0 || iy >= g.in_h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = x * g.stride - g.pad + kx;
                            if (ix < 0 || ix >= g.in_w) continue;
                            dweight[((o * g.in_c + c) * k + ky) * k + kx] += in[(c * g.in_h + iy) * g.in_w + ix] * d;
                        }
                    }
            }
}

void deconv_forward_reference(const ConvGeometry& g, const double* in, const double* weight, double* out) {
    conv_backward_data_reference(g, in, weight, out);
}

void im2col(const ConvGeometry& g, const double* image, double* cols) {
    const int k = g.kernel;
    const int pixels = g.out_pixels();
    for (int c = 0; c < g.in_c; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols + std::size_t((c * k + ky) * k + kx) * pixels;
                for (int y = 0; y < g.out_h; ++y) {
                    const int iy = y * g.stride - g.pad + ky;
                    for (int x = 0; x < g.out_w; ++x) {
                        const int ix = x * g.stride - g.pad + kx;
                        row[y * g.out_w + x] = (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w)
                                                   ? 0.0
                                                   : image[(c * g.in_h + iy) * g.in_w + ix];
                    }
                }
            }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* image) {
    const int k = g.kernel;
    const int pixels = g.out_pixels();
    for (int c = 0; c < g.in_c; ++c)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const double* row = cols + std::size_t((c * k + ky) * k + kx) * pixels;
                for (int y = 0; y < g.out_h; ++y) {
                    const int iy = y * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.in_h) continue;
                    for (int x = 0; x < g.out_w; ++x) {
                        const int ix = x * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= g.in_w) continue;
                        image[(c * g.in_h + iy) * g.in_w + ix] += row[y * g.out_w + x];
                    }
                }
            }
}

void conv_forward(const ConvGeometry& g, int batch, const double* in, const double* weight, double* out) {
    const std::size_t in_size = std::size_t(g.in_c) * g.in_pixels();
    const std::size_t out_size = std::size_t(g.out_c) * g.out_pixels();
    ConstMapMatrix w(weight, g.out_c, g.patch());
#pragma omp parallel
    {
        std::vector<double> cols(std::size_t(g.patch()) * g.out_pixels());
#pragma omp for schedule(static)
        for (int n = 0; n < batch; ++n) {
            im2col(g, in + n * in_size, cols.data());
            MapMatrix o(out + n * out_size, g.out_c, g.out_pixels());
            o.noalias() = w * ConstMapMatrix(cols.data(), g.patch(), g.out_pixels());
        }
    }
}

void conv_backward(const ConvGeometry& g, int batch, const double* in, const double* dout, const double* weight,
                   double* din, double* dweight) {
    const std::size_t in_size = std::size_t(g.in_c) * g.in_pixels();
    const std::size_t out_size = std::size_t(g.out_c) * g.out_pixels();
    const std::size_t w_size = std::size_t(g.out_c) * g.patch();
    ConstMapMatrix w(weight, g.out_c, g.patch());
    std::vector<double> partial(w_size * batch, 0.0);
#pragma omp parallel
    {
        std::vector<double> cols(std::size_t(g.patch()) * g.out_pixels());
#pragma omp for schedule(static)
        for (int n = 0; n < batch; ++n) {
            ConstMapMatrix d(dout + n * out_size, g.out_c, g.out_pixels());
            im2col(g, in + n * in_size, cols.data());
            MapMatrix dw(partial.data() + n * w_size, g.out_c, g.patch());
            dw.noalias() = d * ConstMapMatrix(cols.data(), g.patch(), g.out_pixels()).transpose();
            if (din) {
                MapMatrix dc(cols.data(), g.patch(), g.out_pixels());
                dc.noalias() = w.transpose() * d;
                double* di = din + n * in_size;
                std::fill(di, di + in_size, 0.0);
                col2im_add(g, cols.data(), di);
            }
        }
    }
    for (int n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < w_size; ++i) dweight[i] += partial[n * w_size + i];
}

void deconv_forward(const ConvGeometry& g, int batch, const double* in, const double* weight, double* out) {
    const std::size_t in_size = std::size_t(g.out_c) * g.out_pixels();
    const std::size_t out_size = std::size_t(g.in_c) * g.in_pixels();
    ConstMapMatrix w(weight, g.out_c, g.patch());
#pragma omp parallel
    {
        std::vector<double> cols(std::size_t(g.patch()) * g.out_pixels());
#pragma omp for schedule(static)
        for (int n = 0; n < batch; ++n) {
            MapMatrix c(cols.data(), g.patch(), g.out_pixels());
            c.noalias() = w.transpose() * ConstMapMatrix(in + n * in_size, g.out_c, g.out_pixels());
            double* o = out + n * out_size;
            std::fill(o, o + out_size, 0.0);
            col2im_add(g, cols.data(), o);
        }
    }
}

void deconv_backward(const ConvGeometry& g, int batch, const double* in, const double* dout, const double* weight,
                     double* din, double* dweight) {
    // The deconv is x -> A^T x where A is the conv g; so din = A dout and dW mirrors the conv
    // weight gradient with the roles of image and response swapped.
    const std::size_t in_size = std::size_t(g.out_c) * g.out_pixels();
    const std::size_t out_size = std::size_t(g.in_c) * g.in_pixels();
    const std::size_t w_size = std::size_t(g.out_c) * g.patch();
    ConstMapMatrix w(weight, g.out_c, g.patch());
    std::vector<double> partial(w_size * batch, 0.0);
#pragma omp parallel
    {
        std::vector<double> cols(std::size_t(g.patch()) * g.out_pixels());
#pragma omp for schedule(static)
        for (int n = 0; n < batch; ++n) {
            im2col(g, dout + n * out_size, cols.data());
            ConstMapMatrix c(cols.data(), g.patch(), g.out_pixels());
            ConstMapMatrix x(in + n * in_size, g.out_c, g.out_pixels());
            MapMatrix dw(partial.data() + n * w_size, g.out_c, g.patch());
            dw.noalias() = x * c.transpose();
            if (din) {
                MapMatrix di(din + n * in_size, g.out_c, g.out_pixels());
                di.noalias() = w * c;
            }
        }
    }
    for (int n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < w_size; ++i) dweight[i] += partial[n * w_size + i];
}

}  // namespace mealscan::kernels
