/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <span>

namespace vdg {

struct ImageSize {
  int width = 0;
  int height = 0;
  bool operator==(const ImageSize&) const = default;
};

/// Axis-aligned rectangle in absolute pixels. Zero-area rectangles are
/// rejected at construction, so every Rect has x1 < x2 and y1 < y2.
class Rect {
 public:
  Rect(double x1, double y1, double x2, double y2);

  double x1() const { return x1_; }
  double y1() const { return y1_; }
  double x2() const { return x2_; }
  double y2() const { return y2_; }
  double width() const { return x2_ - x1_; }
  double height() const { return y2_ - y1_; }
  double area() const { return width() * height(); }

  bool within(ImageSize size) const;

  bool operator==(const Rect&) const = default;

 private:
  double x1_, y1_, x2_, y2_;
};

/// Center/size box relative to the image: 0 <= cx, cy <= 1, 0 < w, h <= 1.
struct NormBox {
  double cx = 0.5;
  double cy = 0.5;
  double w = 1.0;
  double h = 1.0;
  bool operator==(const NormBox&) const = default;
};

bool is_valid(const NormBox& box);

double iou(const Rect& a, const Rect& b);

/// Generalized IoU: IoU minus the share of the enclosing hull that the union
/// leaves uncovered. Range (-1, 1].
double giou(const Rect& a, const Rect& b);

/// Smallest rectangle covering every input. Throws PreconditionError on an
/// empty list.
Rect enclosing_box(std::span<const Rect> boxes);

/// Throws ValidationError when the rect leaves the image.
NormBox to_norm_box(const Rect& rect, ImageSize size);
Rect to_rect(const NormBox& box, ImageSize size);

/// Pixel rect for a predicted box, clipped to the image. Widths below a tiny
/// floor are widened so the result is always a valid Rect.
Rect to_clipped_rect(const NormBox& box, ImageSize size);

/// Sum of absolute differences over (cx, cy, w, h).
double l1_box_distance(const NormBox& a, const NormBox& b);

namespace detail {
// IoU/GIoU on raw corner coordinates; tolerates degenerate inputs as long as
// the union has positive area.
double giou_xyxy(double ax1, double ay1, double ax2, double ay2,
                 double bx1, double by1, double bx2, double by2);
}  // namespace detail

}  // namespace vdg
