#pragma once

#include "agnn/image.hpp"

namespace agnn {

/// Intersection over union; 1 when both masks are empty.
double region_similarity(const Mask& pred, const Mask& gt);

/// Foreground pixels with a background 4-neighbour or on the image border.
Mask boundary_map(const Mask& mask);

/// max(1, round(0.0075 * diagonal)).
int default_boundary_tolerance(int height, int width);

/// Boundary F-measure: a boundary pixel is matched when a boundary pixel of
/// the other mask lies within Chebyshev distance `tolerance`. A negative
/// tolerance selects default_boundary_tolerance.
double boundary_f(const Mask& pred, const Mask& gt, int tolerance = -1);

}  // namespace agnn
