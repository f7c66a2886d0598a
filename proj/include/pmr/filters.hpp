#pragma once

#include <vector>

#include "pmr/media.hpp"

namespace pmr::filters {

/// Normalized 1-D Gaussian taps for `sigma`, radius ceil(3σ) (at least 1).
std::vector<double> gaussian_kernel(double sigma);

/// Separable convolution of every channel with `kernel` along both axes,
/// mirroring about the outer pixel edges (border samples repeat once), which
/// keeps the image sum unchanged for symmetric normalized kernels.
media::Image convolve_separable(const media::Image& image, const std::vector<double>& kernel);

/// Gaussian blur; sigma == 0 returns the input unchanged.
media::Image gaussian_blur(const media::Image& image, double sigma);

/// Bilinear resampling to (height, width) with pixel-center alignment.
media::Image resize_bilinear(const media::Image& image, int height, int width);

/// 2x reduction: 5-tap binomial prefilter then 2×2 averaging, so coarse pixel
/// centres line up with the pixel-centre convention of resize_bilinear.
media::Image pyramid_down(const media::Image& image);

}  // namespace pmr::filters
