#pragma once

// Minimal deterministic SVG line charts for sweep results.

#include <string>
#include <utility>
#include <vector>

#include "concept_lens/evaluator.hpp"

namespace concept_lens {

struct ChartSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y); non-finite y values are skipped
};

std::string line_chart_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                           const std::vector<ChartSeries>& series);

enum class SweepField { metric, mean_l0, mean_reconstruction_cosine };

// One series per vocabulary, x = lambda.
std::vector<ChartSeries> sweep_series(const std::vector<SweepRow>& rows, SweepField field);

}  // namespace concept_lens
