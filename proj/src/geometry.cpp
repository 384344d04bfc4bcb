/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vdg/error.hpp"

namespace vdg {

Rect::Rect(double x1, double y1, double x2, double y2)
    : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {
  if (!(x1 < x2) || !(y1 < y2) || !std::isfinite(x1) || !std::isfinite(y1) ||
      !std::isfinite(x2) || !std::isfinite(y2)) {
    std::ostringstream msg;
    msg << "degenerate rect (" << x1 << ", " << y1 << ", " << x2 << ", " << y2
        << ")";
    throw ValidationError(msg.str());
  }
}

bool Rect::within(ImageSize size) const {
  return x1_ >= 0 && y1_ >= 0 && x2_ <= size.width && y2_ <= size.height;
}

bool is_valid(const NormBox& b) {
  return b.w > 0 && b.w <= 1 && b.h > 0 && b.h <= 1 && b.cx >= 0 &&
         b.cx <= 1 && b.cy >= 0 && b.cy <= 1;
}

namespace {

double intersection_area(const Rect& a, const Rect& b) {
  const double w = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double h = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (w <= 0 || h <= 0) return 0.0;
  return w * h;
}

}  // namespace

double iou(const Rect& a, const Rect& b) {
  const double inter = intersection_area(a, b);
  return inter / (a.area() + b.area() - inter);
}

double giou(const Rect& a, const Rect& b) {
  return detail::giou_xyxy(a.x1(), a.y1(), a.x2(), a.y2(), b.x1(), b.y1(),
                           b.x2(), b.y2());
}

namespace detail {

double giou_xyxy(double ax1, double ay1, double ax2, double ay2, double bx1,
                 double by1, double bx2, double by2) {
  const double area_a = (ax2 - ax1) * (ay2 - ay1);
  const double area_b = (bx2 - bx1) * (by2 - by1);
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  const double uni = area_a + area_b - inter;
  const double hull = (std::max(ax2, bx2) - std::min(ax1, bx1)) *
                      (std::max(ay2, by2) - std::min(ay1, by1));
  return inter / uni - (hull - uni) / hull;
}

}  // namespace detail

Rect enclosing_box(std::span<const Rect> boxes) {
  if (boxes.empty()) {
    throw PreconditionError("enclosing_box needs at least one box");
  }
  double x1 = boxes[0].x1(), y1 = boxes[0].y1();
  double x2 = boxes[0].x2(), y2 = boxes[0].y2();
  for (const Rect& r : boxes.subspan(1)) {
    x1 = std::min(x1, r.x1());
    y1 = std::min(y1, r.y1());
    x2 = std::max(x2, r.x2());
    y2 = std::max(y2, r.y2());
  }
  return Rect(x1, y1, x2, y2);
}

NormBox to_norm_box(const Rect& rect, ImageSize size) {
  if (size.width <= 0 || size.height <= 0 || !rect.within(size)) {
    std::ostringstream msg;
    msg << "rect (" << rect.x1() << ", " << rect.y1() << ", " << rect.x2()
        << ", " << rect.y2() << ") outside " << size.width << "x"
        << size.height << " image";
    throw ValidationError(msg.str());
  }
  const double w = size.width, h = size.height;
  return NormBox{(rect.x1() + rect.x2()) / (2 * w),
                 (rect.y1() + rect.y2()) / (2 * h), rect.width() / w,
                 rect.height() / h};
}

Rect to_rect(const NormBox& b, ImageSize size) {
  const double w = size.width, h = size.height;
  return Rect((b.cx - b.w / 2) * w, (b.cy - b.h / 2) * h,
              (b.cx + b.w / 2) * w, (b.cy + b.h / 2) * h);
}

Rect to_clipped_rect(const NormBox& b, ImageSize size) {
  constexpr double kMinExtent = 1e-6;
  const double w = size.width, h = size.height;
  const double bw = std::max(b.w, kMinExtent), bh = std::max(b.h, kMinExtent);
  double x1 = std::clamp((b.cx - bw / 2) * w, 0.0, w);
  double x2 = std::clamp((b.cx + bw / 2) * w, 0.0, w);
  double y1 = std::clamp((b.cy - bh / 2) * h, 0.0, h);
  double y2 = std::clamp((b.cy + bh / 2) * h, 0.0, h);
  if (!(x2 - x1 > kMinExtent)) {
    x1 = std::max(0.0, x1 - kMinExtent);
    x2 = std::min(w, x1 + 2 * kMinExtent);
  }
  if (!(y2 - y1 > kMinExtent)) {
    y1 = std::max(0.0, y1 - kMinExtent);
    y2 = std::min(h, y1 + 2 * kMinExtent);
  }
  return Rect(x1, y1, x2, y2);
}

double l1_box_distance(const NormBox& a, const NormBox& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) +
         std::abs(a.h - b.h);
}

}  // namespace vdg
