#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace maskpose {

/// Dense row-major 2D grid. Rows are image v, columns image u.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, T fill = T{})
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int row, int col) {
    assert(row >= 0 && row < height_ && col >= 0 && col < width_);
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }
  const T& operator()(int row, int col) const {
    assert(row >= 0 && row < height_ && col >= 0 && col < width_);
    return data_[static_cast<std::size_t>(row) * width_ + col];
  }

  bool contains(int row, int col) const {
    return row >= 0 && row < height_ && col >= 0 && col < width_;
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool operator==(const Grid& other) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;
  bool operator==(const Rgb&) const = default;
};

using ColorImage = Grid<Rgb>;
/// Metric depth in meters, 0 where there is no measurement.
using DepthImage = Grid<double>;
/// Per-pixel object id, 0 is background.
using LabelImage = Grid<std::uint8_t>;

/// Image pixel coordinate: u is the column, v the row.
struct Pixel {
  int u = 0;
  int v = 0;
  bool operator==(const Pixel&) const = default;
};

}  // namespace maskpose
