#pragma once

#include <algorithm>
#include <string>

#include "ingraph/tensor.hpp"

namespace ingraph {

// Axis-aligned box in real pixel coordinates, x2 > x1 and y2 > y1.
struct BoxPx {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  bool valid() const { return x2 > x1 && y2 > y1; }

  void require_valid(const std::string& what) const {
    if (!valid())
      throw ValueError(what + ": degenerate box [" + std::to_string(x1) + "," +
                       std::to_string(y1) + "," + std::to_string(x2) + "," +
                       std::to_string(y2) + "]");
  }
};

inline double intersection_area(const BoxPx& a, const BoxPx& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  return w * h;
}

// Tight box covering both inputs.
inline BoxPx union_box(const BoxPx& a, const BoxPx& b) {
  return {std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2),
          std::max(a.y2, b.y2)};
}

inline BoxPx clip_box(const BoxPx& b, double width, double height) {
  return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height),
          std::clamp(b.x2, 0.0, width), std::clamp(b.y2, 0.0, height)};
}

}  // namespace ingraph
