#pragma once

#include <string>
#include <vector>

#include "csmgan/config.hpp"
#include "csmgan/dataset.hpp"
#include "csmgan/localization.hpp"
#include "csmgan/model.hpp"

namespace csmgan {

using Ranked = std::vector<CandidateMoment>;

/// Fraction of samples where any of the first n predictions has IoU ≥ m with its label.
double recall_at_n_iou(const std::vector<Ranked>& predictions, const std::vector<SpanLabel>& labels, std::size_t n,
                       double m);

struct MetricRow {
  std::size_t n = 1;
  double m = 0.5;
  double recall = 0.0;
};

struct MetricTable {
  std::size_t samples = 0;
  std::vector<MetricRow> rows;

  double at(std::size_t n, double m) const;
  /// Aligned human-readable table.
  std::string text() const;
  /// One JSON object per row, newline separated.
  std::string json_lines() const;
};

struct EvalOptions {
  std::size_t threads = 1;  // >1 evaluates disjoint slices in parallel
};

/// Ranked predictions for every sample (top-n from the largest n in the grid).
std::vector<Ranked> predict_all(Model<float>& model, const Dataset& ds, std::size_t top_n, const EvalOptions& opts = {});

/// Throws ContractError for an empty dataset.
MetricTable evaluate(Model<float>& model, const Dataset& ds, const MetricGrid& grid, const EvalOptions& opts = {});

}  // namespace csmgan
