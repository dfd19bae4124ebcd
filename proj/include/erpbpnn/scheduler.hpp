#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <vector>

namespace erpbpnn::sched {

/// Thrown when a task has fewer than `window` recorded returns.
class NotBootstrapped : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReturnEntry {
  long iteration = 0;
  double value = 0.0;
};

struct ReturnHistory {
  std::size_t task = 0;
  std::vector<ReturnEntry> entries;

  std::optional<double> at(long iteration) const;
};

struct Selection {
  long iteration = 0;
  std::size_t task = 0;
};

/// Episodic-return-progress task selector.
class Scheduler {
 public:
  Scheduler(std::size_t num_tasks, std::size_t window = 5, long k_init = 20);

  std::size_t num_tasks() const { return histories_.size(); }
  std::size_t window() const { return window_; }
  long k_init() const { return k_init_; }

  /// Throws std::logic_error when (task, k) was already recorded.
  void record_return(std::size_t task, long k, double value);

  /// Least-squares slope of the last `window` returns against
  /// X = [k-w+1, ..., k]. Throws NotBootstrapped with too little history.
  double erp(std::size_t task, long k) const;
  std::vector<double> erp_all(long k) const;

  /// argmax of ERP, lowest index on ties. Appends to the selection log.
  std::size_t select_task(long k);

  /// Boltzmann draw over ERP / temperature. Experimental alternative to the
  /// argmax rule; appends to the selection log.
  std::size_t select_task_softmax(long k, double temperature, std::mt19937_64& rng);

  /// For callers choosing tasks by other means (random baselines).
  void log_selection(long k, std::size_t task);

  const ReturnHistory& history(std::size_t task) const { return histories_.at(task); }
  const std::vector<Selection>& selections() const { return log_; }
  const std::vector<double>& latest_erp() const { return latest_erp_; }

 private:
  std::vector<ReturnHistory> histories_;
  std::vector<Selection> log_;
  std::vector<double> latest_erp_;
  std::size_t window_;
  long k_init_;
};

/// argmax with lowest-index tie breaking.
std::size_t argmax_lowest(const std::vector<double>& values);

struct FrequencyRow {
  long iteration = 0;
  std::vector<double> fractions;
};

/// Sliding share of the last `nu` selections per task. One row for each
/// selection from the nu-th onward.
std::vector<FrequencyRow> selection_frequency(const std::vector<Selection>& log, std::size_t num_tasks,
                                              std::size_t nu);

void write_frequency_csv(std::ostream& out, const std::vector<FrequencyRow>& rows,
                         std::size_t num_tasks);

}  // namespace erpbpnn::sched
