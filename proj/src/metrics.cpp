#include "agnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace agnn {

namespace {

void same_geometry(const Mask& a, const Mask& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                     std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

/// Square dilation by `radius` (separable max filter).
Mask dilate(const Mask& m, int radius) {
  Mask rows(m.height, m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = 0;
      for (int dx = std::max(0, x - radius); dx <= std::min(m.width - 1, x + radius) && !v; ++dx) v = m.at(y, dx);
      rows.at(y, x) = v;
    }
  }
  Mask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y) {
    for (int x = 0; x < m.width; ++x) {
      std::uint8_t v = 0;
      for (int dy = std::max(0, y - radius); dy <= std::min(m.height - 1, y + radius) && !v; ++dy) v = rows.at(dy, x);
      out.at(y, x) = v;
    }
  }
  return out;
}

double matched_fraction(const Mask& boundary, const Mask& reach) {
  std::size_t total = 0, hit = 0;
  for (std::size_t i = 0; i < boundary.data.size(); ++i) {
    if (!boundary.data[i]) continue;
    ++total;
    hit += reach.data[i];
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace

double region_similarity(const Mask& pred, const Mask& gt) {
  same_geometry(pred, gt, "region_similarity");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    inter += pred.data[i] & gt.data[i];
    uni += pred.data[i] | gt.data[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Mask boundary_map(const Mask& mask) {
  Mask b(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      const bool edge = y == 0 || x == 0 || y == mask.height - 1 || x == mask.width - 1 || !mask.at(y - 1, x) ||
                        !mask.at(y + 1, x) || !mask.at(y, x - 1) || !mask.at(y, x + 1);
      b.at(y, x) = edge ? 1 : 0;
    }
  }
  return b;
}

int default_boundary_tolerance(int height, int width) {
  return std::max(1, static_cast<int>(std::lround(0.0075 * std::hypot(height, width))));
}

double boundary_f(const Mask& pred, const Mask& gt, int tolerance) {
  same_geometry(pred, gt, "boundary_f");
  if (tolerance < 0) tolerance = default_boundary_tolerance(gt.height, gt.width);
  const Mask pb = boundary_map(pred), gb = boundary_map(gt);
  const bool p_empty = pb.count() == 0, g_empty = gb.count() == 0;
  if (p_empty && g_empty) return 1.0;
  if (p_empty || g_empty) return 0.0;
  const double precision = matched_fraction(pb, dilate(gb, tolerance));
  const double recall = matched_fraction(gb, dilate(pb, tolerance));
  return precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
}

}  // namespace agnn
