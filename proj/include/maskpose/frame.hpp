#pragma once

#include <cstdint>
#include <vector>

#include "maskpose/geometry.hpp"
#include "maskpose/image.hpp"

namespace maskpose {

/// H×W grid restricted to {0, 1}.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width) : grid_(height, width, 0) {}

  /// Throws InvalidArgument if any value is outside {0, 1}.
  static BinaryMask from_values(const Grid<std::uint8_t>& values);
  /// Foreground wherever `values` is nonzero.
  static BinaryMask from_nonzero(const Grid<std::uint8_t>& values);
  /// Foreground wherever `labels` equals `label`.
  static BinaryMask from_label(const LabelImage& labels, std::uint8_t label);

  int height() const { return grid_.height(); }
  int width() const { return grid_.width(); }
  bool operator()(int row, int col) const { return grid_(row, col) != 0; }
  void set(int row, int col, bool on) { grid_(row, col) = on ? 1 : 0; }
  bool contains(int row, int col) const { return grid_.contains(row, col); }

  /// Number of foreground pixels.
  int count() const;
  bool is_subset_of(const BinaryMask& other) const;
  const Grid<std::uint8_t>& grid() const { return grid_; }

  bool operator==(const BinaryMask&) const = default;

 private:
  Grid<std::uint8_t> grid_;
};

struct Annotation {
  int object_id = 0;
  Pose pose;
  BinaryMask mask;
};

/// One RGB-D capture with its ground truth.
struct RgbdFrame {
  int frame_id = 0;
  ColorImage color;
  DepthImage depth;
  CameraIntrinsics intrinsics;
  /// Winning object id per pixel from the renderer (0 = background).
  LabelImage labels;
  std::vector<Annotation> annotations;

  /// Throws InvalidArgument if sizes disagree, depth is negative, masks
  /// overlap, or an annotated object has no mask pixel.
  void validate() const;
};

}  // namespace maskpose
