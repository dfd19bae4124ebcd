#include "erpbpnn/metrics.hpp"

#include <cmath>

namespace erpbpnn::metrics {

namespace {
template <typename F>
double mean_over(std::span<const Trajectory> ts, F&& f) {
  if (ts.empty()) return 0.0;
  double s = 0.0;
  for (const auto& t : ts) s += f(t);
  return s / static_cast<double>(ts.size());
}
}  // namespace

double episodic_return(std::span<const Trajectory> trajectories) {
  return mean_over(trajectories, [](const Trajectory& t) {
    double s = 0.0;
    for (double r : t.rewards) s += r;
    return s;
  });
}

double discounted_return(std::span<const Trajectory> trajectories, double gamma) {
  return mean_over(trajectories, [gamma](const Trajectory& t) {
    double s = 0.0, d = 1.0;
    for (double r : t.rewards) {
      s += d * r;
      d *= gamma;
    }
    return s;
  });
}

double distance_to_goal(std::span<const Trajectory> trajectories) {
  return mean_over(trajectories, [](const Trajectory& t) {
    if (t.fingertip_path.empty()) throw ConfigError("distance_to_goal: empty fingertip path");
    return (t.fingertip_path.back() - t.goal).norm();
  });
}

double path_deviation(std::span<const env::Vec2> path, const env::Vec2& goal) {
  if (path.empty()) throw ConfigError("path_deviation: empty path");
  double length = 0.0;
  for (std::size_t i = 1; i < path.size(); ++i) length += (path[i] - path[i - 1]).norm();
  return length - (goal - path.front()).norm();
}

double mean_path_deviation(std::span<const Trajectory> trajectories) {
  return mean_over(trajectories,
                   [](const Trajectory& t) { return path_deviation(t.fingertip_path, t.goal); });
}

BestPolicyStore::BestPolicyStore(std::size_t num_tasks) : entries_(num_tasks) {}

namespace {
template <typename F>
double mean_entries(const std::vector<BestPolicyStore::Entry>& es, F&& f) {
  if (es.empty()) return std::nan("");
  double s = 0.0;
  for (const auto& e : es) {
    if (!e.seen) return std::nan("");
    s += f(e);
  }
  return s / static_cast<double>(es.size());
}
}  // namespace

double BestPolicyStore::mean_best_return() const {
  return mean_entries(entries_, [](const Entry& e) { return e.best_return; });
}
double BestPolicyStore::mean_best_distance() const {
  return mean_entries(entries_, [](const Entry& e) { return e.best_distance; });
}
double BestPolicyStore::mean_best_deviation() const {
  return mean_entries(entries_, [](const Entry& e) { return e.best_deviation; });
}

}  // namespace erpbpnn::metrics
