#pragma once

#include <cstdint>
#include <vector>

#include "maskpose/frame.hpp"

namespace maskpose {

/// Crop sizes are padded to multiples of this so encoder-decoder feature
/// maps stay integer-sized.
inline constexpr int kCropMultiple = 16;

/// Source-image rectangle: top-left corner (u0, v0) and size.
struct BoundingBox {
  int u0 = 0;
  int v0 = 0;
  int height = 0;
  int width = 0;
  bool operator==(const BoundingBox&) const = default;
};

/// Per-object input of the pose network. Color and depth are zero outside the mask.
struct MaskedCrop {
  ColorImage color;
  DepthImage depth;
  BinaryMask mask;
  BoundingBox bbox;
  /// Crop-local pixels selected by choose_points.
  std::vector<Pixel> chosen_pixels;
};

/// 3×3 median filter with edge replication at the borders.
BinaryMask median3(const BinaryMask& mask);

/// Dilation with a full 5×5 square, windows clipped at the borders.
BinaryMask dilate5(const BinaryMask& mask);

/// median3 followed by dilate5.
BinaryMask filter_mask(const BinaryMask& mask);

/// Tight bounding box of the foreground. Throws ObjectNotFound when empty.
BoundingBox tight_bbox(const BinaryMask& mask);

/// Pads `box` symmetrically to multiples of kCropMultiple; a window that
/// would leave the image is shifted back inside, and only clipped when it is
/// larger than the image itself.
BoundingBox pad_bbox(const BoundingBox& box, int image_height, int image_width);

/// Bit-wise and of color and depth with `mask`, cropped to the padded bounding
/// box of the mask. Throws ObjectNotFound for an empty mask.
MaskedCrop crop_with_mask(const RgbdFrame& frame, const BinaryMask& mask);

/// Picks `n` crop pixels with mask = 1 and depth > 0 (without replacement when
/// enough exist, else with replacement), sorted in row-major order, and stores
/// them in crop.chosen_pixels. Throws NoValidDepth when no pixel qualifies.
std::vector<Pixel> choose_points(MaskedCrop& crop, int n, std::uint64_t seed);

/// Camera-frame points of crop.chosen_pixels.
Points3 chosen_points(const MaskedCrop& crop, const CameraIntrinsics& intrinsics);

}  // namespace maskpose
