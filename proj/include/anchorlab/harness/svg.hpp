// Copyright 2026 The AnchorLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace anchorlab {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Standalone SVG line chart with axes, ticks and a legend.
std::string svg_line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<Series>& series);

/// Side-by-side heatmaps with a shared [0, 1] color scale and cell values.
std::string svg_heatmaps(const std::vector<std::string>& titles, const std::vector<Eigen::MatrixXd>& matrices,
                         const std::vector<std::string>& labels);

std::string xml_escape(const std::string& s);

}  // namespace anchorlab
