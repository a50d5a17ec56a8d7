#pragma once

#include "lfsr/errors.hpp"
#include "lfsr/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>

namespace lfsr {

/// Row-major pixel grid: rows are y (height), columns are x (width).
using Pixels = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskPixels = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Single-channel 2-D image.
///
/// `normalized` means the values are in the zero-mean/unit-variance units of
/// the source slice described by `norm_mean` and `norm_std`; raw intensity is
/// `pixel * norm_std + norm_mean`. Crops and downsampled copies of a
/// normalized slice keep the flag and the statistics of their source.
struct ImageSlice {
  Pixels pixels;
  bool normalized = false;
  double norm_mean = 0.0;
  double norm_std = 1.0;

  ImageSlice() = default;
  explicit ImageSlice(Pixels p) : pixels(std::move(p)) {}

  int width() const { return static_cast<int>(pixels.cols()); }
  int height() const { return static_cast<int>(pixels.rows()); }
  bool same_dims(const ImageSlice& o) const {
    return width() == o.width() && height() == o.height();
  }
  std::string dims() const { return std::to_string(width()) + "x" + std::to_string(height()); }

  /// Copy with new pixel values and this slice's intensity metadata.
  ImageSlice with_pixels(Pixels p) const {
    ImageSlice out(std::move(p));
    out.normalized = normalized;
    out.norm_mean = norm_mean;
    out.norm_std = norm_std;
    return out;
  }

  /// Raw intensities (inverse of normalization; identity for raw slices).
  Pixels denormalized() const {
    return normalized ? Pixels(pixels * norm_std + norm_mean) : pixels;
  }
};

/// Binary lesion annotation.
struct SegMask {
  MaskPixels pixels;

  int width() const { return static_cast<int>(pixels.cols()); }
  int height() const { return static_cast<int>(pixels.rows()); }
  bool empty() const { return (pixels == 0).all(); }
};

/// Axis-aligned box in HR pixel coordinates.
struct RoiBox {
  int x0 = 0, y0 = 0, w = 0, h = 0;

  friend bool operator==(const RoiBox&, const RoiBox&) = default;
  bool contains(int x, int y) const { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; }
  std::string str() const {
    return "(x0=" + std::to_string(x0) + ", y0=" + std::to_string(y0) + ", w=" + std::to_string(w) +
           ", h=" + std::to_string(h) + ")";
  }
};

/// Full-frame aligned LR/HR slices.
struct SlicePair {
  ImageSlice lr;
  ImageSlice hr;
  int scale = 4;
};

/// Lesion-cropped LR/HR pair. `dr` is the HR crop downsampled by 2, present at scale 4.
struct RoiPair {
  ImageSlice lr;
  ImageSlice hr;
  std::optional<ImageSlice> dr;
  int scale = 4;
  RoiBox box;
  std::string id;
};

/// Batch-of-one NCHW tensor view of a slice.
inline Tensor<double> to_tensor(const ImageSlice& s) {
  Tensor<double> t({1, 1, s.height(), s.width()});
  Eigen::Map<Pixels>(t.data(), s.height(), s.width()) = s.pixels;
  return t;
}

/// Extracts sample `n` (channel 0) of an NCHW tensor.
inline Pixels tensor_plane(const Tensor<double>& t, int n = 0, int c = 0) {
  const Shape s = t.shape();
  return Eigen::Map<const Pixels>(t.data() + t.index(n, c, 0, 0), s.h, s.w);
}

}  // namespace lfsr
