#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cloakforge/errors.hpp"

namespace cloakforge {

// The class a trigger can cloak. Trigger flags on any other class are invalid.
inline constexpr const char* kTriggerClass = "person";

// Axis-aligned box in pixel coordinates, origin top-left, xmin < xmax and
// ymin < ymax for a valid box.
struct BBox {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (xmin + xmax); }
  double center_y() const { return 0.5 * (ymin + ymax); }

  bool valid() const { return xmin < xmax && ymin < ymax && xmin >= 0 && ymin >= 0; }

  BBox clipped(double width_limit, double height_limit) const {
    return BBox{std::clamp(xmin, 0.0, width_limit), std::clamp(ymin, 0.0, height_limit),
                std::clamp(xmax, 0.0, width_limit), std::clamp(ymax, 0.0, height_limit)};
  }

  bool operator==(const BBox&) const = default;
};

struct ObjectAnnotation {
  std::string class_name;
  BBox bbox;
  bool is_trigger = false;
  bool difficult = false;

  bool operator==(const ObjectAnnotation&) const = default;
};

// Ground truth for one image: size plus the labeled objects in stable order.
struct FrameAnnotation {
  std::string image_id;
  int width = 0, height = 0, depth = 3;
  std::vector<ObjectAnnotation> objects;

  bool has_trigger() const {
    for (const auto& o : objects)
      if (o.is_trigger) return true;
    return false;
  }

  std::vector<BBox> trigger_boxes() const {
    std::vector<BBox> out;
    for (const auto& o : objects)
      if (o.is_trigger) out.push_back(o.bbox);
    return out;
  }

  // Throws ValidationError on the first violated invariant, naming the
  // offending object index.
  void validate() const {
    if (width <= 0 || height <= 0 || depth <= 0)
      throw ValidationError("frame '" + image_id + "': non-positive size " +
                            std::to_string(width) + "x" + std::to_string(height) + "x" +
                            std::to_string(depth));
    for (size_t i = 0; i < objects.size(); ++i) {
      const auto& o = objects[i];
      const std::string where = "object " + std::to_string(i);
      if (o.class_name.empty()) throw ValidationError(where + ": empty class name");
      if (!(o.bbox.xmin < o.bbox.xmax))
        throw ValidationError(where + ": xmin >= xmax");
      if (!(o.bbox.ymin < o.bbox.ymax))
        throw ValidationError(where + ": ymin >= ymax");
      if (o.bbox.xmin < 0 || o.bbox.ymin < 0)
        throw ValidationError(where + ": negative coordinate");
      if (o.bbox.xmax > width || o.bbox.ymax > height)
        throw ValidationError(where + ": box exceeds image bounds");
      if (o.is_trigger && o.class_name != kTriggerClass)
        throw ValidationError(where + ": trigger flag on class '" + o.class_name +
                              "' (only '" + std::string(kTriggerClass) + "' can carry it)");
    }
  }

  bool operator==(const FrameAnnotation&) const = default;
};

}  // namespace cloakforge
