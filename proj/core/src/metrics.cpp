#include "uvdiff/metrics.hpp"

#include "uvdiff/common.hpp"

#include <array>
#include <cmath>
#include <limits>

namespace uvdiff {

double mse(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    require(a.size() > 0, "mse: empty tensors");
    const float* pa = a.data();
    const float* pb = b.data();
    double sum = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(pa[i]) - double(pb[i]);
        sum += d * d;
    }
    return sum / double(a.size());
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
    require(peak > 0, "psnr: peak must be positive");
    const double err = mse(a, b);
    if (err == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / err);
}

double psnr_display(double psnr_db) {
    if (std::isinf(psnr_db)) return kPsnrDisplayCap;
    return std::min(psnr_db, kPsnrDisplayCap);
}

namespace {

constexpr int kWin = 11;

std::array<double, kWin * kWin> gaussian_window() {
    std::array<double, kWin * kWin> w{};
    const double sigma = 1.5;
    double sum = 0;
    for (int y = 0; y < kWin; ++y)
        for (int x = 0; x < kWin; ++x) {
            const double dy = y - kWin / 2, dx = x - kWin / 2;
            const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            w[std::size_t(y) * kWin + std::size_t(x)] = v;
            sum += v;
        }
    for (double& v : w) v /= sum;
    return w;
}

// SSIM over one channel plane. All five window sums come from a single loop
// over the same elements, so identical inputs hit the exact-1.0 branch of
// the formula bit-for-bit.
double ssim_plane(const float* a, const float* b, std::size_t h, std::size_t w,
                  double c1, double c2, const std::array<double, kWin * kWin>& win) {
    double total = 0;
    std::size_t count = 0;
    for (std::size_t y0 = 0; y0 + kWin <= h; ++y0)
        for (std::size_t x0 = 0; x0 + kWin <= w; ++x0) {
            double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
            for (int wy = 0; wy < kWin; ++wy)
                for (int wx = 0; wx < kWin; ++wx) {
                    const double g = win[std::size_t(wy) * kWin + std::size_t(wx)];
                    const double va = a[(y0 + std::size_t(wy)) * w + x0 + std::size_t(wx)];
                    const double vb = b[(y0 + std::size_t(wy)) * w + x0 + std::size_t(wx)];
                    sx += g * va;
                    sy += g * vb;
                    // One shared rounding pattern for all second moments:
                    // the product rounds first (commutative, so the cross
                    // term is symmetric in a/b), then scales by g (so for
                    // a == b the cross term lands bitwise on sxx and the
                    // exact-1.0 branch below fires).
                    sxx += g * (va * va);
                    syy += g * (vb * vb);
                    sxy += g * (va * vb);
                }
            const double var_x = sxx - sx * sx;
            const double var_y = syy - sy * sy;
            const double cov = sxy - sx * sy;
            const double num = (2.0 * sx * sy + c1) * (2.0 * cov + c2);
            const double den = (sx * sx + sy * sy + c1) * (var_x + var_y + c2);
            total += num == den ? 1.0 : num / den;
            ++count;
        }
    return total / double(count);
}

} // namespace

double ssim(const Tensor& a, const Tensor& b, double peak) {
    require(a.shape() == b.shape(),
            "ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    require(peak > 0, "ssim: peak must be positive");
    require(a.rank() == 2 || a.rank() == 3, "ssim: expected [H,W] or [C,H,W]");
    const std::size_t channels = a.rank() == 3 ? a.extent(0) : 1;
    const std::size_t h = a.extent(a.rank() - 2);
    const std::size_t w = a.extent(a.rank() - 1);
    require(h >= kWin && w >= kWin,
            "ssim: spatial dims must be >= 11, got " + shape_str(a.shape()));

    static const std::array<double, kWin * kWin> win = gaussian_window();
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const std::size_t plane = h * w;
    double total = 0;
    for (std::size_t c = 0; c < channels; ++c)
        total += ssim_plane(a.data() + c * plane, b.data() + c * plane, h, w, c1, c2, win);
    return total / double(channels);
}

} // namespace uvdiff
