#include "maskpose/frame.hpp"

#include <algorithm>

#include "maskpose/errors.hpp"

namespace maskpose {

BinaryMask BinaryMask::from_values(const Grid<std::uint8_t>& values) {
  for (std::uint8_t v : values.data()) {
    if (v > 1) throw InvalidArgument("BinaryMask: values must be 0 or 1");
  }
  BinaryMask m;
  m.grid_ = values;
  return m;
}

BinaryMask BinaryMask::from_nonzero(const Grid<std::uint8_t>& values) {
  BinaryMask m(values.height(), values.width());
  for (std::size_t i = 0; i < values.size(); ++i) m.grid_.data()[i] = values.data()[i] ? 1 : 0;
  return m;
}

BinaryMask BinaryMask::from_label(const LabelImage& labels, std::uint8_t label) {
  BinaryMask m(labels.height(), labels.width());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    m.grid_.data()[i] = labels.data()[i] == label ? 1 : 0;
  }
  return m;
}

int BinaryMask::count() const {
  return static_cast<int>(std::count(grid_.data().begin(), grid_.data().end(), 1));
}

bool BinaryMask::is_subset_of(const BinaryMask& other) const {
  if (height() != other.height() || width() != other.width()) return false;
  for (std::size_t i = 0; i < grid_.size(); ++i) {
    if (grid_.data()[i] && !other.grid_.data()[i]) return false;
  }
  return true;
}

void RgbdFrame::validate() const {
  const int h = depth.height(), w = depth.width();
  if (color.height() != h || color.width() != w) throw InvalidArgument("frame: color/depth size mismatch");
  if (intrinsics.height != h || intrinsics.width != w) {
    throw InvalidArgument("frame: intrinsics do not match image size");
  }
  for (double d : depth.data()) {
    if (!(d >= 0.0)) throw InvalidArgument("frame: negative or NaN depth");
  }
  Grid<std::uint8_t> seen(h, w, 0);
  for (const auto& a : annotations) {
    if (a.mask.height() != h || a.mask.width() != w) throw InvalidArgument("frame: mask size mismatch");
    if (a.mask.count() == 0) {
      throw InvalidArgument("frame: object " + std::to_string(a.object_id) + " has an empty mask");
    }
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        if (!a.mask(r, c)) continue;
        if (seen(r, c)) throw InvalidArgument("frame: annotation masks overlap");
        seen(r, c) = 1;
      }
    }
  }
}

}  // namespace maskpose
