#include "maskpose/maskproc.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "maskpose/errors.hpp"

namespace maskpose {

BinaryMask median3(const BinaryMask& mask) {
  const int h = mask.height(), w = mask.width();
  BinaryMask out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      int ones = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          ones += mask(std::clamp(r + dr, 0, h - 1), std::clamp(c + dc, 0, w - 1));
        }
      }
      out.set(r, c, ones >= 5);
    }
  }
  return out;
}

BinaryMask dilate5(const BinaryMask& mask) {
  const int h = mask.height(), w = mask.width();
  BinaryMask out(h, w);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      for (int rr = std::max(0, r - 2); rr <= std::min(h - 1, r + 2); ++rr) {
        for (int cc = std::max(0, c - 2); cc <= std::min(w - 1, c + 2); ++cc) out.set(rr, cc, true);
      }
    }
  }
  return out;
}

BinaryMask filter_mask(const BinaryMask& mask) { return dilate5(median3(mask)); }

BoundingBox tight_bbox(const BinaryMask& mask) {
  int r0 = mask.height(), r1 = -1, c0 = mask.width(), c1 = -1;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (!mask(r, c)) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  if (r1 < 0) throw ObjectNotFound("mask has no foreground pixel");
  return {c0, r0, r1 - r0 + 1, c1 - c0 + 1};
}

namespace {

// Returns (start, size) of the padded interval along one axis.
std::pair<int, int> pad_axis(int start, int size, int limit) {
  int padded = (size + kCropMultiple - 1) / kCropMultiple * kCropMultiple;
  if (padded >= limit) return {0, limit};
  int begin = start - (padded - size) / 2;
  begin = std::clamp(begin, 0, limit - padded);
  return {begin, padded};
}

}  // namespace

BoundingBox pad_bbox(const BoundingBox& box, int image_height, int image_width) {
  const auto [v0, h] = pad_axis(box.v0, box.height, image_height);
  const auto [u0, w] = pad_axis(box.u0, box.width, image_width);
  return {u0, v0, h, w};
}

MaskedCrop crop_with_mask(const RgbdFrame& frame, const BinaryMask& mask) {
  if (mask.height() != frame.depth.height() || mask.width() != frame.depth.width()) {
    throw InvalidArgument("crop_with_mask: mask size does not match the frame");
  }
  const BoundingBox box = pad_bbox(tight_bbox(mask), mask.height(), mask.width());
  MaskedCrop crop;
  crop.bbox = box;
  crop.color = ColorImage(box.height, box.width);
  crop.depth = DepthImage(box.height, box.width, 0.0);
  crop.mask = BinaryMask(box.height, box.width);
  for (int r = 0; r < box.height; ++r) {
    for (int c = 0; c < box.width; ++c) {
      const int sr = box.v0 + r, sc = box.u0 + c;
      if (!mask(sr, sc)) continue;
      crop.mask.set(r, c, true);
      crop.color(r, c) = frame.color(sr, sc);
      crop.depth(r, c) = frame.depth(sr, sc);
    }
  }
  return crop;
}

std::vector<Pixel> choose_points(MaskedCrop& crop, int n, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("choose_points: n must be >= 1");
  std::vector<Pixel> valid;
  for (int r = 0; r < crop.mask.height(); ++r) {
    for (int c = 0; c < crop.mask.width(); ++c) {
      if (crop.mask(r, c) && crop.depth(r, c) > 0.0) valid.push_back({c, r});
    }
  }
  if (valid.empty()) throw NoValidDepth("choose_points: no masked pixel has depth");

  std::mt19937_64 rng(seed);
  const int m = static_cast<int>(valid.size());
  std::vector<int> picked;
  picked.reserve(static_cast<std::size_t>(n));
  if (m >= n) {
    std::vector<int> idx(static_cast<std::size_t>(m));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n; ++i) {
      std::uniform_int_distribution<int> pick(i, m - 1);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
      picked.push_back(idx[static_cast<std::size_t>(i)]);
    }
  } else {
    std::uniform_int_distribution<int> pick(0, m - 1);
    for (int i = 0; i < n; ++i) picked.push_back(pick(rng));
  }
  std::sort(picked.begin(), picked.end());
  crop.chosen_pixels.clear();
  for (int i : picked) crop.chosen_pixels.push_back(valid[static_cast<std::size_t>(i)]);
  return crop.chosen_pixels;
}

Points3 chosen_points(const MaskedCrop& crop, const CameraIntrinsics& intrinsics) {
  return backproject(crop.depth, intrinsics, crop.chosen_pixels, Pixel{crop.bbox.u0, crop.bbox.v0});
}

}  // namespace maskpose
