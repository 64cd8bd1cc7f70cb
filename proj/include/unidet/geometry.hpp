#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "unidet/error.hpp"
#include "unidet/parallel.hpp"

namespace unidet {

/// Axis-aligned box in continuous image coordinates, corner form,
/// origin top-left. No "+1" pixel convention: width is x2 - x1.
struct BBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }

  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Empty string when the box is valid, otherwise the violated invariant.
inline std::string box_problem(const BBox& b) {
  if (!std::isfinite(b.x1) || !std::isfinite(b.y1) || !std::isfinite(b.x2) ||
      !std::isfinite(b.y2)) {
    return "non-finite coordinate";
  }
  if (!(b.x2 > b.x1)) return "x2 <= x1";
  if (!(b.y2 > b.y1)) return "y2 <= y1";
  return {};
}

inline bool is_valid(const BBox& b) { return box_problem(b).empty(); }

inline void validate_box(const BBox& b) {
  if (auto problem = box_problem(b); !problem.empty()) {
    fail(ErrorKind::validation, "degenerate box: " + problem);
  }
}

namespace detail {

inline double iou_unchecked(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace detail

/// Intersection over union; exactly 0 for disjoint or edge-touching boxes.
inline double iou(const BBox& a, const BBox& b) {
  validate_box(a);
  validate_box(b);
  return detail::iou_unchecked(a, b);
}

/// Dense row-major similarity matrix between two box sets.
class IoUMatrix {
 public:
  IoUMatrix() = default;
  IoUMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> values() const { return values_; }

  IoUMatrix transposed() const {
    IoUMatrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

inline void validate_boxes(std::span<const BBox> boxes, const char* set_name) {
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (auto problem = box_problem(boxes[i]); !problem.empty()) {
      fail(ErrorKind::validation,
           std::string("degenerate box in ") + set_name + " at index " + std::to_string(i) + ": " + problem);
    }
  }
}

/// Entry (l, k) is iou(set_a[l], set_b[k]). Rows are filled independently,
/// so the result does not depend on `threads`.
inline IoUMatrix iou_matrix(std::span<const BBox> set_a, std::span<const BBox> set_b, unsigned threads = 1) {
  validate_boxes(set_a, "first set");
  validate_boxes(set_b, "second set");
  IoUMatrix m(set_a.size(), set_b.size());
  parallel_for(set_a.size(), threads, [&](std::size_t r) {
    for (std::size_t c = 0; c < set_b.size(); ++c) m(r, c) = detail::iou_unchecked(set_a[r], set_b[c]);
  });
  return m;
}

}  // namespace unidet
