#include "pmr/filters.hpp"

#include <algorithm>
#include <cmath>

namespace pmr::filters {

using media::Image;

std::vector<double> gaussian_kernel(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
        total += k[i + radius];
    }
    for (double& v : k) v /= total;
    return k;
}

namespace {

// Half-sample symmetric extension: ... b a | a b ... | y z | z y ...
int mirror(int i, int n) {
    const int period = 2 * n;
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - 1 - i;
}

}  // namespace

Image convolve_separable(const Image& image, const std::vector<double>& kernel) {
    const int h = image.height();
    const int w = image.width();
    const int ch = image.channels();
    const int radius = static_cast<int>(kernel.size()) / 2;
    Image tmp(h, w, ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                double s = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int xx = mirror(x + k, w);
                    s += kernel[k + radius] * image.at(y, xx, c);
                }
                tmp.at(y, x, c) = s;
            }
        }
    }
    Image out(h, w, ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < ch; ++c) {
                double s = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    const int yy = mirror(y + k, h);
                    s += kernel[k + radius] * tmp.at(yy, x, c);
                }
                out.at(y, x, c) = s;
            }
        }
    }
    return out;
}

Image gaussian_blur(const Image& image, double sigma) {
    if (sigma <= 0.0) return image;
    return convolve_separable(image, gaussian_kernel(sigma));
}

Image resize_bilinear(const Image& image, int height, int width) {
    Image out(height, width, image.channels());
    const double sy = static_cast<double>(image.height()) / height;
    const double sx = static_cast<double>(image.width()) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, image.height() - 1);
        const double wy = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, image.width() - 1);
            const double wx = fx - x0;
            for (int c = 0; c < image.channels(); ++c) {
                out.at(y, x, c) = (1 - wy) * ((1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c)) +
                                  wy * ((1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c));
            }
        }
    }
    return out;
}

Image pyramid_down(const Image& image) {
    static const std::vector<double> binomial = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
    const Image smooth = convolve_separable(image, binomial);
    Image out(image.height() / 2, image.width() / 2, image.channels());
    for (int y = 0; y < out.height(); ++y) {
        for (int x = 0; x < out.width(); ++x) {
            for (int c = 0; c < image.channels(); ++c) {
                out.at(y, x, c) = 0.25 * (smooth.at(2 * y, 2 * x, c) + smooth.at(2 * y, 2 * x + 1, c) +
                                          smooth.at(2 * y + 1, 2 * x, c) + smooth.at(2 * y + 1, 2 * x + 1, c));
            }
        }
    }
    return out;
}

}  // namespace pmr::filters
