#include "csmgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace csmgan {

double recall_at_n_iou(const std::vector<Ranked>& predictions, const std::vector<SpanLabel>& labels, std::size_t n,
                       double m) {
  if (predictions.size() != labels.size()) {
    throw ContractError("recall_at_n_iou: " + std::to_string(predictions.size()) + " prediction lists for " +
                        std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw ContractError("recall_at_n_iou: no samples");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Ranked& ranked = predictions[i];
    const auto last = ranked.begin() + static_cast<std::ptrdiff_t>(std::min(n, ranked.size()));
    if (std::any_of(ranked.begin(), last, [&](const CandidateMoment& c) { return temporal_iou(c.span(), labels[i]) >= m; })) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double MetricTable::at(std::size_t n, double m) const {
  for (const MetricRow& r : rows) {
    if (r.n == n && std::abs(r.m - m) < 1e-12) return r.recall;
  }
  throw ContractError("metric table has no entry for R@" + std::to_string(n) + ", IoU=" + std::to_string(m));
}

std::string MetricTable::text() const {
  std::ostringstream os;
  os << std::left << std::setw(8) << "R@n" << std::setw(10) << "IoU=m" << "recall\n";
  for (const MetricRow& r : rows) {
    os << std::left << std::setw(8) << ("R@" + std::to_string(r.n)) << std::setw(10) << std::setprecision(2) << std::fixed
       << r.m << std::setprecision(4) << r.recall << "\n";
  }
  os << "(" << samples << " samples)\n";
  return os.str();
}

std::string MetricTable::json_lines() const {
  std::string out;
  for (const MetricRow& r : rows) {
    nlohmann::json j = {{"n", r.n}, {"iou", r.m}, {"recall", r.recall}, {"samples", samples}};
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<Ranked> predict_all(Model<float>& model, const Dataset& ds, std::size_t top_n, const EvalOptions& opts) {
  std::vector<Ranked> out(ds.size());
  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.threads, ds.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < ds.size(); ++i) out[i] = model.predict(ds[i], top_n);
    return out;
  }
  // Forward passes only read parameter values, so workers can share the model.
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < ds.size(); i += workers) out[i] = model.predict(ds[i], top_n);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

MetricTable evaluate(Model<float>& model, const Dataset& ds, const MetricGrid& grid, const EvalOptions& opts) {
  if (ds.empty()) throw ContractError("evaluate: dataset is empty");
  if (grid.empty()) throw ContractError("evaluate: metric grid is empty");
  std::size_t top_n = 1;
  for (const auto& [n, m] : grid) top_n = std::max(top_n, n);
  const std::vector<Ranked> predictions = predict_all(model, ds, top_n, opts);
  std::vector<SpanLabel> labels;
  for (const Sample& s : ds) labels.push_back(s.label);

  MetricTable table;
  table.samples = ds.size();
  for (const auto& [n, m] : grid) table.rows.push_back({n, m, recall_at_n_iou(predictions, labels, n, m)});
  return table;
}

}  // namespace csmgan
