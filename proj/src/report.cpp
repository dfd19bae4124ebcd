#include "erpbpnn/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "erpbpnn/error.hpp"

namespace erpbpnn::report {

namespace {

constexpr const char* kMetricsColumns[] = {
    "iteration",     "episodes_so_far",   "train_episodes_so_far", "task",
    "best_return",   "best_distance",     "best_deviation",        "best_discounted_return",
    "iter_return",   "iter_train_return", "iter_distance",         "iter_deviation",
    "det_return",    "det_distance",      "det_deviation"};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& s) {
  if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    throw ConfigError("csv: malformed number '" + s + "'");
  }
}

long parse_long(const std::string& s) {
  try {
    return std::stol(s);
  } catch (const std::exception&) {
    throw ConfigError("csv: malformed integer '" + s + "'");
  }
}

nlohmann::json real_json(double x) {
  return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x);
}

}  // namespace

std::string format_real(double x) {
  if (std::isnan(x)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void write_metrics_header(std::ostream& out) {
  bool first = true;
  for (const char* c : kMetricsColumns) {
    out << (first ? "" : ",") << c;
    first = false;
  }
  out << '\n';
}

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  out << r.iteration << ',' << r.episodes_so_far << ',' << r.train_episodes_so_far << ','
      << r.task;
  for (double v : {r.best_return, r.best_distance, r.best_deviation, r.best_discounted_return,
                   r.iter_return, r.iter_train_return, r.iter_distance, r.iter_deviation,
                   r.det_return, r.det_distance, r.det_deviation}) {
    out << ',' << format_real(v);
  }
  out << '\n';
}

std::vector<MetricsRow> parse_metrics_csv(std::istream& in) {
  std::vector<MetricsRow> rows;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("metrics.csv: empty file");
  const auto header = split(line);
  if (header.size() != std::size(kMetricsColumns))
    throw ConfigError("metrics.csv: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw ConfigError("metrics.csv: wrong field count in '" + line + "'");
    MetricsRow r;
    r.iteration = parse_long(f[0]);
    r.episodes_so_far = parse_long(f[1]);
    r.train_episodes_so_far = parse_long(f[2]);
    r.task = static_cast<std::size_t>(parse_long(f[3]));
    double* reals[] = {&r.best_return,  &r.best_distance,     &r.best_deviation,
                       &r.best_discounted_return, &r.iter_return, &r.iter_train_return,
                       &r.iter_distance, &r.iter_deviation,   &r.det_return,
                       &r.det_distance,  &r.det_deviation};
    for (std::size_t i = 0; i < std::size(reals); ++i) *reals[i] = parse_real(f[4 + i]);
    rows.push_back(r);
  }
  return rows;
}

void write_scheduler_header(std::ostream& out, std::size_t num_tasks) {
  out << "iteration";
  for (std::size_t m = 0; m < num_tasks; ++m) out << ",erp_task" << m;
  out << ",selected_task\n";
}

void write_scheduler_row(std::ostream& out, const SchedulerCsvRow& row) {
  out << row.iteration;
  for (double e : row.erp) out << ',' << format_real(e);
  out << ',' << row.selected << '\n';
}

std::vector<SchedulerCsvRow> parse_scheduler_csv(std::istream& in) {
  std::vector<SchedulerCsvRow> rows;
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("scheduler.csv: empty file");
  const auto header = split(line);
  if (header.size() < 3) throw ConfigError("scheduler.csv: unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != header.size()) throw ConfigError("scheduler.csv: wrong field count");
    SchedulerCsvRow r;
    r.iteration = parse_long(f.front());
    for (std::size_t i = 1; i + 1 < f.size(); ++i) r.erp.push_back(parse_real(f[i]));
    r.selected = static_cast<std::size_t>(parse_long(f.back()));
    rows.push_back(std::move(r));
  }
  return rows;
}

nlohmann::json summarize(const std::vector<MetricsRow>& rows, std::size_t num_tasks,
                         const std::vector<long>& milestones) {
  // Latest row per task after each iteration, in file order.
  struct Snapshot {
    long iteration;
    long episodes;
    long train_episodes;
    std::map<std::size_t, MetricsRow> latest;
  };
  std::vector<Snapshot> snaps;
  std::map<std::size_t, MetricsRow> latest;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    latest[rows[i].task] = rows[i];
    const bool last_of_iter = i + 1 == rows.size() || rows[i + 1].iteration != rows[i].iteration;
    if (last_of_iter)
      snaps.push_back({rows[i].iteration, rows[i].episodes_so_far, rows[i].train_episodes_so_far, latest});
  }

  auto describe = [&](const Snapshot& s) {
    nlohmann::json per_task = nlohmann::json::array();
    double sr = 0.0, sd = 0.0, sv = 0.0;
    bool complete = s.latest.size() == num_tasks;
    for (const auto& [task, r] : s.latest) {
      per_task.push_back({{"task", task},
                          {"best_return", real_json(r.best_return)},
                          {"best_distance", real_json(r.best_distance)},
                          {"best_deviation", real_json(r.best_deviation)}});
      sr += r.best_return;
      sd += r.best_distance;
      sv += r.best_deviation;
    }
    const double n = static_cast<double>(num_tasks);
    nlohmann::json mean = nullptr;
    if (complete) {
      mean = {{"best_return", real_json(sr / n)},
              {"best_distance", real_json(sd / n)},
              {"best_deviation", real_json(sv / n)}};
    }
    return nlohmann::json{{"iteration", s.iteration},
                          {"episodes_so_far", s.episodes},
                          {"train_episodes_so_far", s.train_episodes},
                          {"mean_over_tasks", mean},
                          {"per_task", per_task}};
  };

  nlohmann::json out;
  out["milestones"] = nlohmann::json::array();
  for (long m : milestones) {
    nlohmann::json entry = {{"episodes", m}, {"reached", false}};
    for (const auto& s : snaps) {
      if (s.episodes >= m) {
        entry["reached"] = true;
        entry["at"] = describe(s);
        break;
      }
    }
    out["milestones"].push_back(std::move(entry));
  }
  out["final"] = snaps.empty() ? nlohmann::json(nullptr) : describe(snaps.back());
  return out;
}

void print_summary(std::ostream& out, const nlohmann::json& summary) {
  auto cell = [](const nlohmann::json& v) {
    std::ostringstream s;
    if (v.is_null()) s << "-";
    else s << std::fixed << std::setprecision(4) << v.get<double>();
    return s.str();
  };
  out << std::left << std::setw(12) << "episodes" << std::setw(12) << "iteration" << std::setw(14)
      << "return" << std::setw(14) << "distance" << std::setw(14) << "deviation" << '\n';
  auto line = [&](const std::string& label, const nlohmann::json& at) {
    const auto& mean = at.at("mean_over_tasks");
    out << std::setw(12) << label << std::setw(12) << at.at("iteration").get<long>();
    if (mean.is_null()) {
      out << "(not all tasks evaluated yet)\n";
      return;
    }
    out << std::setw(14) << cell(mean.at("best_return")) << std::setw(14)
        << cell(mean.at("best_distance")) << std::setw(14) << cell(mean.at("best_deviation")) << '\n';
  };
  for (const auto& m : summary.at("milestones")) {
    const std::string label = std::to_string(m.at("episodes").get<long>());
    if (!m.at("reached").get<bool>()) {
      out << std::setw(12) << label << "not reached\n";
      continue;
    }
    line(label, m.at("at"));
  }
  if (!summary.at("final").is_null()) line("final", summary.at("final"));
}

}  // namespace erpbpnn::report
