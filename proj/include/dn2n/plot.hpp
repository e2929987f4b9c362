#pragma once

#include <string>
#include <vector>

#include "dn2n/image.hpp"

namespace dn2n {

struct BarSeries {
    std::string label;
    std::vector<double> values;   // one per group
    Color color = Color(0.2f, 0.4f, 0.8f);
};

// Grouped bar chart rendered to an 8-bit PNG with a small built-in bitmap
// font; enough for the metric tables the pipeline emits.
void save_bar_chart(const std::string& path, const std::string& title,
                    const std::vector<std::string>& groups, const std::vector<BarSeries>& series,
                    int width = 640, int height = 400);

// 5x7 bitmap text, uppercased; used by the chart and the depth-map labels.
void draw_text(Image& img, int x, int y, const std::string& text, const Color& color, int scale = 1);

}  // namespace dn2n
