#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ascnet {

enum class Units { kBqPerMl, BqPerMl, PerCm, Unitless };

std::string_view to_string(Units u);
Units units_from_string(std::string_view s);

/// Single 2-D slice, row-major (row, column).
struct Image2D {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image2D() = default;
  Image2D(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  float at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
  std::size_t size() const { return data.size(); }
};

struct VoxelSize {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;
};

/// Stack of S slices of H x W float voxels, C order (slice, row, column).
struct ImageVolume {
  int slices = 0;
  int height = 0;
  int width = 0;
  VoxelSize voxel_size_mm;
  Units units = Units::Unitless;
  std::vector<float> data;

  ImageVolume() = default;
  ImageVolume(int s, int h, int w, VoxelSize vs, Units u)
      : slices(s), height(h), width(w), voxel_size_mm(vs), units(u),
        data(static_cast<std::size_t>(s) * h * w, 0.0f) {}

  std::size_t slice_size() const { return static_cast<std::size_t>(height) * width; }

  std::span<float> slice(int s) {
    return {data.data() + s * slice_size(), slice_size()};
  }
  std::span<const float> slice(int s) const {
    return {data.data() + s * slice_size(), slice_size()};
  }

  Image2D slice_image(int s) const;
  void set_slice(int s, const Image2D& img);

  bool same_shape(const ImageVolume& o) const {
    return slices == o.slices && height == o.height && width == o.width;
  }
};

// Throws DomainError when any voxel is NaN or infinite.
void require_finite(std::span<const float> values, std::string_view what);

}  // namespace ascnet
