#pragma once

#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace erpbpnn::report {

/// One line of metrics.csv. NaN marks a value that was not measured in that
/// iteration and is written as an empty field.
struct MetricsRow {
  long iteration = 0;
  long episodes_so_far = 0;
  long train_episodes_so_far = 0;
  std::size_t task = 0;
  double best_return = 0.0;
  double best_distance = 0.0;
  double best_deviation = 0.0;
  double best_discounted_return = 0.0;
  double iter_return = 0.0;
  double iter_train_return = 0.0;
  double iter_distance = 0.0;
  double iter_deviation = 0.0;
  double det_return = 0.0;
  double det_distance = 0.0;
  double det_deviation = 0.0;
};

/// Shortest round-trip decimal, empty for NaN.
std::string format_real(double x);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);
std::vector<MetricsRow> parse_metrics_csv(std::istream& in);

struct SchedulerCsvRow {
  long iteration = 0;
  std::vector<double> erp;
  std::size_t selected = 0;
};

void write_scheduler_header(std::ostream& out, std::size_t num_tasks);
void write_scheduler_row(std::ostream& out, const SchedulerCsvRow& row);
std::vector<SchedulerCsvRow> parse_scheduler_csv(std::istream& in);

/// Milestone table: for each milestone the first iteration whose episode
/// count reaches it, with best-so-far values per task and their task mean.
nlohmann::json summarize(const std::vector<MetricsRow>& rows, std::size_t num_tasks,
                         const std::vector<long>& milestones);

/// Human-readable rendering of `summarize` output.
void print_summary(std::ostream& out, const nlohmann::json& summary);

}  // namespace erpbpnn::report
