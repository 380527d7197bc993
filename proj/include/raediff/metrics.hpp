#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "raediff/tensor.hpp"

namespace raediff {

// Metrics operate in the display domain: model-range [-1,1] values are
// mapped to [0,1] and clamped before comparison.
namespace detail {
inline double to_display(double v) { return std::clamp((v + 1.0) * 0.5, 0.0, 1.0); }
}

inline double mse(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = detail::to_display(a.values[i]) - detail::to_display(b.values[i]);
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

/// PSNR in dB on unit dynamic range; identical images give the +infinity
/// sentinel.
inline double psnr(const ImageTensor& a, const ImageTensor& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

inline constexpr int kSsimWindow = 8;

/// Mean local SSIM: uniform 8x8 sliding window (stride 1), constants
/// C1=0.01^2, C2=0.03^2 on unit dynamic range, channels averaged. The
/// uniform window is used instead of the 11x11 Gaussian variant so the
/// metric is defined on images as small as 8x8.
inline double ssim(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "ssim");
    if (a.height < kSsimWindow || a.width < kSsimWindow)
        throw std::invalid_argument("ssim: image smaller than the 8x8 window");
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    constexpr double inv_n = 1.0 / (kSsimWindow * kSsimWindow);

    double total = 0.0;
    long windows = 0;
    for (int ch = 0; ch < a.channels; ++ch) {
        for (int y0 = 0; y0 + kSsimWindow <= a.height; ++y0) {
            for (int x0 = 0; x0 + kSsimWindow <= a.width; ++x0) {
                double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                for (int y = y0; y < y0 + kSsimWindow; ++y) {
                    for (int x = x0; x < x0 + kSsimWindow; ++x) {
                        const double va = detail::to_display(a.at(ch, y, x));
                        const double vb = detail::to_display(b.at(ch, y, x));
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                }
                const double ma = sa * inv_n, mb = sb * inv_n;
                const double va = saa * inv_n - ma * ma;
                const double vb = sbb * inv_n - mb * mb;
                const double cov = sab * inv_n - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++windows;
            }
        }
    }
    return total / windows;
}

struct MetricRow {
    double mse = 0.0;
    double psnr_db = 0.0;
    double ssim = 0.0;
};

/// Per-image metrics plus the dataset mean for a pair of aligned datasets.
/// A +infinity PSNR propagates into the mean (all-identical pairs report the
/// sentinel).
struct MetricReport {
    std::vector<MetricRow> rows;
    MetricRow mean;
};

inline MetricReport evaluate_pairs(const std::vector<ImageTensor>& ref,
                                   const std::vector<ImageTensor>& test) {
    if (ref.size() != test.size())
        throw std::invalid_argument("evaluate_pairs: misaligned dataset sizes");
    if (ref.empty())
        throw std::invalid_argument("evaluate_pairs: empty datasets");
    MetricReport report;
    report.rows.reserve(ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) {
        MetricRow row;
        row.mse = mse(ref[i], test[i]);
        row.psnr_db = psnr(ref[i], test[i]);
        row.ssim = ssim(ref[i], test[i]);
        report.mean.mse += row.mse;
        report.mean.psnr_db += row.psnr_db;
        report.mean.ssim += row.ssim;
        report.rows.push_back(row);
    }
    report.mean.mse /= ref.size();
    report.mean.psnr_db /= ref.size();
    report.mean.ssim /= ref.size();
    return report;
}

}  // namespace raediff
