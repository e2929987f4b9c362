#include "dn2n/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

namespace dn2n {

namespace {

// 5x7 glyphs, one byte per row, low 5 bits used
const std::map<char, std::array<std::uint8_t, 7>>& font() {
    static const std::map<char, std::array<std::uint8_t, 7>> glyphs = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
        {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
        {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}}, {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
        {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}}, {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
        {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}}, {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
        {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}}, {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
        {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}}, {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
        {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
        {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}}, {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
        {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}}, {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
        {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}}, {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
        {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11}}, {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
        {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}}, {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
        {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}}, {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
        {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F}}, {':', {0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00}},
        {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}}, {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
    };
    return glyphs;
}

void fill_rect(Image& img, int x0, int y0, int x1, int y1, const Color& c) {
    x0 = std::max(0, x0);
    y0 = std::max(0, y0);
    x1 = std::min(img.width, x1);
    y1 = std::min(img.height, y1);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) img.set(y, x, c);
}

}  // namespace

void draw_text(Image& img, int x, int y, const std::string& text, const Color& color, int scale) {
    int cx = x;
    for (char raw : text) {
        const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
        auto it = font().find(c);
        if (it != font().end()) {
            for (int row = 0; row < 7; ++row)
                for (int col = 0; col < 5; ++col)
                    if (it->second[row] & (1 << (4 - col)))
                        fill_rect(img, cx + col * scale, y + row * scale, cx + (col + 1) * scale,
                                  y + (row + 1) * scale, color);
        }
        cx += 6 * scale;
    }
}

void save_bar_chart(const std::string& path, const std::string& title,
                    const std::vector<std::string>& groups, const std::vector<BarSeries>& series,
                    int width, int height) {
    Image img(height, width, 1.0f);
    const Color black(0, 0, 0);
    const Color gray(0.85f, 0.85f, 0.85f);

    const int margin_l = 56, margin_r = 16, margin_t = 32, margin_b = 48;
    const int plot_w = width - margin_l - margin_r;
    const int plot_h = height - margin_t - margin_b;

    double vmax = 1e-9;
    for (const BarSeries& s : series)
        for (double v : s.values) vmax = std::max(vmax, v);
    vmax *= 1.1;

    draw_text(img, margin_l, 10, title, black);

    // horizontal grid + y labels
    for (int tick = 0; tick <= 4; ++tick) {
        const double val = vmax * tick / 4.0;
        const int y = margin_t + plot_h - static_cast<int>(plot_h * tick / 4.0);
        fill_rect(img, margin_l, y, width - margin_r, y + 1, tick == 0 ? black : gray);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.1f", val);
        draw_text(img, 8, y - 3, buf, black);
    }

    const int ngroups = static_cast<int>(groups.size());
    const int nseries = static_cast<int>(series.size());
    if (ngroups > 0 && nseries > 0) {
        const double group_w = static_cast<double>(plot_w) / ngroups;
        const double bar_w = group_w / (nseries + 1);
        for (int g = 0; g < ngroups; ++g) {
            for (int s = 0; s < nseries; ++s) {
                if (g >= static_cast<int>(series[s].values.size())) continue;
                const double v = series[s].values[g];
                const int bh = static_cast<int>(plot_h * std::clamp(v / vmax, 0.0, 1.0));
                const int x0 = margin_l + static_cast<int>(g * group_w + (s + 0.5) * bar_w);
                fill_rect(img, x0, margin_t + plot_h - bh, x0 + static_cast<int>(bar_w) - 2,
                          margin_t + plot_h, series[s].color);
            }
            draw_text(img, margin_l + static_cast<int>(g * group_w + 4), margin_t + plot_h + 6,
                      groups[g].substr(0, 10), black);
        }
        // legend
        int lx = margin_l;
        for (int s = 0; s < nseries; ++s) {
            fill_rect(img, lx, height - 18, lx + 10, height - 8, series[s].color);
            draw_text(img, lx + 14, height - 17, series[s].label.substr(0, 12), black);
            lx += 14 + 6 * 13;
        }
    }
    save_png(img, path);
}

}  // namespace dn2n
