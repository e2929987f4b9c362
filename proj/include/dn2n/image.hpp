#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace dn2n {

using Color = Eigen::Vector3f;

// Interleaved RGB image, float values in [0,1], row-major, origin top-left.
struct Image {
    int height = 0;
    int width = 0;
    std::vector<float> data;  // height*width*3

    Image() = default;
    Image(int h, int w, float fill = 0.f) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, fill) {}

    float* px(int y, int x) { return data.data() + (static_cast<size_t>(y) * width + x) * 3; }
    const float* px(int y, int x) const { return data.data() + (static_cast<size_t>(y) * width + x) * 3; }

    Color at(int y, int x) const {
        const float* p = px(y, x);
        return {p[0], p[1], p[2]};
    }
    void set(int y, int x, const Color& c) {
        float* p = px(y, x);
        p[0] = c[0];
        p[1] = c[1];
        p[2] = c[2];
    }

    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
    size_t pixel_count() const { return static_cast<size_t>(height) * width; }

    // Bilinear sample at continuous pixel coords (x,y), clamped to borders.
    Color sample_bilinear(float x, float y) const;

    void clamp01();

    // Snap to the 8-bit grid used by the PNG container, so that saved and
    // in-memory images are bit-identical.
    void quantize8();
};

Image absdiff(const Image& a, const Image& b);
double mean_abs_diff(const Image& a, const Image& b);
double mse(const Image& a, const Image& b);

// 8-bit RGB PNG I/O (libpng). Throws std::runtime_error with the path on failure.
void save_png(const Image& img, const std::string& path);
Image load_png(const std::string& path);

// Grayscale [0,1] map helpers (depth visualization).
void save_gray_png(const std::vector<float>& values, int height, int width, const std::string& path);

}  // namespace dn2n
