#pragma once

#include "nvsd/render.hpp"

namespace nvsd {

// 10 log10(1 / MSE) over all channels, inputs in [0,1]. Identical images
// report the 99 dB cap. Throws std::invalid_argument on shape mismatch.
float psnr(const Image& a, const Image& b);

// SSIM with a 7x7 uniform sliding window on the channel-mean luminance,
// C1 = 0.01^2, C2 = 0.03^2, population moments, mean over all windows.
// Throws std::invalid_argument if the image is smaller than the window.
float ssim(const Image& a, const Image& b);

}  // namespace nvsd
