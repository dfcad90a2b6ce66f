#pragma once

// Per-epoch metric stream. CSV columns: epoch,step,phase,name,value
// (value printed with 17 significant digits).

#include <cstddef>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

namespace boostmt {

struct MetricRow {
  std::size_t epoch = 0;
  std::size_t step = 0;
  std::string phase;
  std::string name;
  double value = 0.0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

class RunRecord {
 public:
  void add(std::size_t epoch, std::size_t step, std::string phase, std::string name, double value) {
    rows_.push_back({epoch, step, std::move(phase), std::move(name), value});
  }

  const std::vector<MetricRow>& rows() const { return rows_; }
  std::size_t size() const { return rows_.size(); }

  // Rows with the given phase and name, in order.
  std::vector<MetricRow> series(const std::string& phase, const std::string& name) const {
    std::vector<MetricRow> out;
    for (const auto& r : rows_)
      if (r.phase == phase && r.name == name) out.push_back(r);
    return out;
  }

  static void write_header(std::ostream& os) { os << "epoch,step,phase,name,value\n"; }

  // Writes rows [from, size()) and returns size().
  std::size_t write_rows(std::ostream& os, std::size_t from = 0) const {
    os << std::setprecision(17);
    for (std::size_t i = from; i < rows_.size(); ++i) {
      const auto& r = rows_[i];
      os << r.epoch << ',' << r.step << ',' << r.phase << ',' << r.name << ',' << r.value << '\n';
    }
    return rows_.size();
  }

 private:
  std::vector<MetricRow> rows_;
};

}  // namespace boostmt
