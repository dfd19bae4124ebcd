#include "erpbpnn/scheduler.hpp"

#include <Eigen/Core>

#include <charconv>
#include <cmath>
#include <string>
#include <string_view>

#include "erpbpnn/linalg.hpp"

namespace erpbpnn::sched {

std::optional<double> ReturnHistory::at(long iteration) const {
  for (const auto& e : entries)
    if (e.iteration == iteration) return e.value;
  return std::nullopt;
}

Scheduler::Scheduler(std::size_t num_tasks, std::size_t window, long k_init)
    : histories_(num_tasks), latest_erp_(num_tasks, 0.0), window_(window), k_init_(k_init) {
  if (num_tasks == 0) throw ConfigError("scheduler: need at least one task");
  if (window < 2) throw ConfigError("scheduler: window must be at least 2");
  if (k_init <= static_cast<long>(window))
    throw ConfigError("scheduler: k_init must exceed the ERP window");
  for (std::size_t m = 0; m < num_tasks; ++m) histories_[m].task = m;
}

void Scheduler::record_return(std::size_t task, long k, double value) {
  auto& h = histories_.at(task);
  for (const auto& e : h.entries) {
    if (e.iteration == k) {
      throw std::logic_error("scheduler: return for task " + std::to_string(task) +
                             " at iteration " + std::to_string(k) + " recorded twice");
    }
  }
  h.entries.push_back({k, value});
}

double Scheduler::erp(std::size_t task, long k) const {
  const auto& entries = histories_.at(task).entries;
  if (entries.size() < window_) {
    throw NotBootstrapped("scheduler: task " + std::to_string(task) + " has " +
                          std::to_string(entries.size()) + " returns, window needs " +
                          std::to_string(window_));
  }
  const auto w = static_cast<Index>(window_);
  Vec xs(w), ys(w);
  const std::size_t first = entries.size() - window_;
  for (Index i = 0; i < w; ++i) {
    xs[i] = static_cast<double>(k - w + 1 + i);
    ys[i] = entries[first + static_cast<std::size_t>(i)].value;
  }
  // xs are distinct by construction, so the slope always exists.
  return *lsq_slope(xs, ys);
}

std::vector<double> Scheduler::erp_all(long k) const {
  std::vector<double> out(num_tasks());
  for (std::size_t m = 0; m < num_tasks(); ++m) out[m] = erp(m, k);
  return out;
}

std::size_t argmax_lowest(const std::vector<double>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::size_t Scheduler::select_task(long k) {
  latest_erp_ = erp_all(k);
  const std::size_t chosen = argmax_lowest(latest_erp_);
  log_.push_back({k, chosen});
  return chosen;
}

std::size_t Scheduler::select_task_softmax(long k, double temperature, std::mt19937_64& rng) {
  if (!(temperature > 0.0)) throw ConfigError("scheduler: softmax temperature must be positive");
  latest_erp_ = erp_all(k);
  double peak = latest_erp_.front();
  for (double v : latest_erp_) peak = std::max(peak, v);
  std::vector<double> weights;
  for (double v : latest_erp_) weights.push_back(std::exp((v - peak) / temperature));
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  const std::size_t chosen = pick(rng);
  log_.push_back({k, chosen});
  return chosen;
}

void Scheduler::log_selection(long k, std::size_t task) {
  if (task >= num_tasks()) throw ConfigError("scheduler: selected task out of range");
  log_.push_back({k, task});
}

std::vector<FrequencyRow> selection_frequency(const std::vector<Selection>& log, std::size_t num_tasks,
                                              std::size_t nu) {
  std::vector<FrequencyRow> rows;
  if (nu == 0 || log.size() < nu) return rows;
  std::vector<std::size_t> counts(num_tasks, 0);
  for (std::size_t i = 0; i < log.size(); ++i) {
    ++counts.at(log[i].task);
    if (i >= nu) --counts[log[i - nu].task];
    if (i + 1 < nu) continue;
    FrequencyRow row;
    row.iteration = log[i].iteration;
    for (std::size_t c : counts) row.fractions.push_back(static_cast<double>(c) / static_cast<double>(nu));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_frequency_csv(std::ostream& out, const std::vector<FrequencyRow>& rows,
                         std::size_t num_tasks) {
  out << "iteration";
  for (std::size_t m = 0; m < num_tasks; ++m) out << ",freq_task" << m;
  out << '\n';
  for (const auto& r : rows) {
    out << r.iteration;
    for (double f : r.fractions) {
      char buf[32];
      const auto res = std::to_chars(buf, buf + sizeof buf, f);
      out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
}

}  // namespace erpbpnn::sched
