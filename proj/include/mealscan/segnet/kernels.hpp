#pragma once

#include <span>

namespace mealscan::kernels {

/// Geometry of a 2D convolution over one CHW sample. For a transposed convolution the same
/// struct describes the *forward* convolution it is the adjoint of: `in` is the large image.
struct ConvGeometry {
    int in_c = 0, in_h = 0, in_w = 0;
    int out_c = 0, out_h = 0, out_w = 0;
    int kernel = 3, stride = 1, pad = 1;

    int patch() const { return in_c * kernel * kernel; }
    int out_pixels() const { return out_h * out_w; }
    int in_pixels() const { return in_h * in_w; }

    static ConvGeometry same(int in_c, int in_h, int in_w, int out_c, int kernel, int stride);
};

// Serial reference kernels: direct loops, one sample, kept for testing the fast paths.
// Weights are [out_c][in_c][k][k].
void conv_forward_reference(const ConvGeometry& g, const double* in, const double* weight, double* out);
void conv_backward_data_reference(const ConvGeometry& g, const double* dout, const double* weight, double* din);
void conv_backward_weight_reference(const ConvGeometry& g, const double* in, const double* dout, double* dweight);

void im2col(const ConvGeometry& g, const double* image, double* cols);
void col2im_add(const ConvGeometry& g, const double* cols, double* image);

// Batched fast paths: im2col + GEMM, parallel over samples with OpenMP. Results are
// independent of the thread count; weight gradients are reduced in sample order.
void conv_forward(const ConvGeometry& g, int batch, const double* in, const double* weight, double* out);
void conv_backward(const ConvGeometry& g, int batch, const double* in, const double* dout, const double* weight,
                   double* din, double* dweight);

// Transposed convolution: the adjoint of the conv described by g. Input is [batch][g.out_c][g.out_h][g.out_w],
// output [batch][g.in_c][g.in_h][g.in_w], weight [g.out_c][g.in_c][k][k] (deconv in-channels first).
void deconv_forward(const ConvGeometry& g, int batch, const double* in, const double* weight, double* out);
void deconv_backward(const ConvGeometry& g, int batch, const double* in, const double* dout, const double* weight,
                     double* din, double* dweight);
void deconv_forward_reference(const ConvGeometry& g, const double* in, const double* weight, double* out);

}  // namespace mealscan::kernels
