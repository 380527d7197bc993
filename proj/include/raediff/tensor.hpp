#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace raediff {

/// Planar (channel-major) image tensor: values[(c*H + y)*W + x].
/// Clean images and triggers live in [-1, 1]; diffused states are never
/// clamped, so intermediate tensors may leave that range.
struct ImageTensor {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> values;

    ImageTensor() = default;

    ImageTensor(int h, int w, int c, double fill = 0.0)
        : height(h), width(w), channels(c) {
        if (h <= 0 || w <= 0 || c <= 0)
            throw std::invalid_argument("ImageTensor: dimensions must be positive");
        values.assign(static_cast<std::size_t>(h) * w * c, fill);
    }

    std::size_t size() const { return values.size(); }
    bool empty() const { return values.empty(); }

    bool same_shape(const ImageTensor& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }

    double& at(int c, int y, int x) {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return values[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
};

inline void require_same_shape(const ImageTensor& a, const ImageTensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

inline ImageTensor zeros_like(const ImageTensor& a) {
    return ImageTensor(a.height, a.width, a.channels);
}

inline bool all_finite(const ImageTensor& a) {
    for (double v : a.values)
        if (!std::isfinite(v)) return false;
    return true;
}

/// Euclidean norm of the elementwise difference.
inline double l2_distance(const ImageTensor& a, const ImageTensor& b) {
    require_same_shape(a, b, "l2_distance");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace raediff
