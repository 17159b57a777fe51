#pragma once

#include "mealscan/core/types.hpp"

namespace mealscan::crf {

/// Dense CRF with Potts compatibility and the usual two Gaussian kernels:
///   k(i, j) = w_a exp(-|p_i - p_j|^2 / 2 theta_a^2 - |I_i - I_j|^2 / 2 theta_b^2) + w_s exp(-|p_i - p_j|^2 / 2 theta_g^2)
/// Positions in pixels, colors in 8-bit RGB units.
struct CrfParams {
    double w_appearance = 3.0;
    double w_smoothness = 1.0;
    double theta_alpha = 20.0;
    double theta_beta = 13.0;
    double theta_gamma = 3.0;
    int iterations = 5;
    /// Restrict messages to a (2R+1)^2 window, R = ceil(3 * max spatial bandwidth). Required above 128x128.
    bool truncate = false;
    double probability_floor = 1e-12;

    void validate() const;
};

inline constexpr int kMaxBruteForcePixels = 128 * 128;

/// Gibbs energy of a labeling: sum of -log p_i(y_i) plus Potts-weighted kernel over unordered pairs.
double crf_energy(const LabelMap& labeling, const ClassProbabilities& unary, const ColorImage& color,
                  const CrfParams& params);

/// Mean-field marginals after params.iterations synchronous updates, parallel over pixels.
ClassProbabilities refine_crf(const ClassProbabilities& unary, const ColorImage& color, const CrfParams& params);
/// Single-threaded reference with the same arithmetic order; bit-identical to refine_crf.
ClassProbabilities refine_crf_reference(const ClassProbabilities& unary, const ColorImage& color,
                                        const CrfParams& params);

}  // namespace mealscan::crf
