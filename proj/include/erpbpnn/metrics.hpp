#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "erpbpnn/env.hpp"

namespace erpbpnn::metrics {

/// One completed episode as the metrics see it.
struct Trajectory {
  std::vector<double> rewards;             // raw
  std::vector<env::Vec2> fingertip_path;   // x(0)..x(T)
  env::Vec2 goal = env::Vec2::Zero();
};

double episodic_return(std::span<const Trajectory> trajectories);
double discounted_return(std::span<const Trajectory> trajectories, double gamma);
double distance_to_goal(std::span<const Trajectory> trajectories);

/// Polyline length of the fingertip path minus ||g - x(0)||.
double path_deviation(std::span<const env::Vec2> path, const env::Vec2& goal);
double mean_path_deviation(std::span<const Trajectory> trajectories);

struct EvalRecord {
  long iteration = 0;
  std::size_t task = 0;
  double mean_return = 0.0;           // raw, undiscounted
  double mean_discounted_return = 0.0;
  double mean_distance = 0.0;
  double mean_deviation = 0.0;
};

/// Best-so-far values per task. The checkpoint follows the best mean return
/// (strict improvement); distance and deviation track their own minima.
class BestPolicyStore {
 public:
  explicit BestPolicyStore(std::size_t num_tasks = 0);

  struct Entry {
    std::optional<EvalRecord> best_return_record;
    double best_return = -std::numeric_limits<double>::infinity();
    double best_discounted_return = -std::numeric_limits<double>::infinity();
    double best_distance = std::numeric_limits<double>::infinity();
    double best_deviation = std::numeric_limits<double>::infinity();
    nlohmann::json checkpoint;
    bool seen = false;
  };

  /// Returns true when the checkpoint was replaced. `checkpoint` is only
  /// invoked on replacement.
  template <typename MakeCheckpoint>
  bool update(const EvalRecord& rec, MakeCheckpoint&& checkpoint) {
    Entry& e = entries_.at(rec.task);
    e.seen = true;
    e.best_distance = std::min(e.best_distance, rec.mean_distance);
    e.best_deviation = std::min(e.best_deviation, rec.mean_deviation);
    e.best_discounted_return = std::max(e.best_discounted_return, rec.mean_discounted_return);
    if (rec.mean_return > e.best_return) {
      e.best_return = rec.mean_return;
      e.best_return_record = rec;
      e.checkpoint = checkpoint();
      return true;
    }
    return false;
  }
  bool would_improve(const EvalRecord& rec) const {
    return rec.mean_return > entries_.at(rec.task).best_return;
  }

  const Entry& entry(std::size_t task) const { return entries_.at(task); }
  std::size_t num_tasks() const { return entries_.size(); }

  /// Mean over tasks of each task's best-so-far value; NaN until every task is seen.
  double mean_best_return() const;
  double mean_best_distance() const;
  double mean_best_deviation() const;

 private:
  std::vector<Entry> entries_;
};

}  // namespace erpbpnn::metrics
