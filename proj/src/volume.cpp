#include "ascnet/volume.hpp"

#include <algorithm>
#include <cmath>

#include "ascnet/errors.hpp"

namespace ascnet {

std::string_view to_string(Units u) {
  switch (u) {
    case Units::kBqPerMl: return "kBq/mL";
    case Units::BqPerMl: return "Bq/mL";
    case Units::PerCm: return "1/cm";
    case Units::Unitless: return "unitless";
  }
  return "unitless";
}

Units units_from_string(std::string_view s) {
  if (s == "kBq/mL") return Units::kBqPerMl;
  if (s == "Bq/mL") return Units::BqPerMl;
  if (s == "1/cm") return Units::PerCm;
  if (s == "unitless") return Units::Unitless;
  throw DomainError("unknown units '" + std::string(s) + "'");
}

Image2D ImageVolume::slice_image(int s) const {
  Image2D img(height, width);
  auto src = slice(s);
  std::copy(src.begin(), src.end(), img.data.begin());
  return img;
}

void ImageVolume::set_slice(int s, const Image2D& img) {
  if (img.height != height || img.width != width) {
    throw ShapeError("slice shape does not match volume");
  }
  std::copy(img.data.begin(), img.data.end(), slice(s).begin());
}

void require_finite(std::span<const float> values, std::string_view what) {
  for (float v : values) {
    if (!std::isfinite(v)) {
      throw DomainError(std::string(what) + " contains non-finite values");
    }
  }
}

}  // namespace ascnet
