#pragma once

#include "uvdiff/tensor.hpp"

namespace uvdiff {

// Mean squared error over all elements, accumulated in double.
double mse(const Tensor& a, const Tensor& b);

// Peak signal-to-noise ratio in dB for signals spanning [0, peak].
// Returns +infinity for bit-identical inputs; see psnr_display for tables.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// Infinite PSNR (zero error) is reported as 99 dB in human-readable output;
// JSON writers should emit null instead.
inline constexpr double kPsnrDisplayCap = 99.0;
double psnr_display(double psnr_db);

// Mean SSIM with the standard 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, dynamic range `peak`. Accepts [H,W] or [C,H,W]
// (averaged over channels); only fully valid windows are used, so both
// spatial dims must be >= 11. ssim(a, a) == 1.0 exactly.
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

} // namespace uvdiff
