#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "maskpose/metrics.hpp"

namespace maskpose {

struct CurveSeries {
  std::string label;
  std::vector<CurvePoint> points;
};

/// Line chart of accuracy (percent) against threshold (centimeters), one
/// line per series with a legend. The format follows the file extension.
void render_curves(const std::filesystem::path& path, const std::vector<CurveSeries>& series,
                   const std::string& title);

}  // namespace maskpose
