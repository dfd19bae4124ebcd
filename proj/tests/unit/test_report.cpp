#include <doctest.h>

#include <cmath>
#include <sstream>

#include "erpbpnn/report.hpp"

using namespace erpbpnn::report;

namespace {

MetricsRow row(long k, long eps, std::size_t task, double ret, double dist) {
  MetricsRow r;
  r.iteration = k;
  r.episodes_so_far = eps;
  r.train_episodes_so_far = eps / 2;
  r.task = task;
  r.best_return = ret;
  r.best_distance = dist;
  r.best_deviation = dist / 2;
  r.best_discounted_return = ret / 2;
  r.iter_return = ret;
  r.iter_train_return = std::nan("");
  r.iter_distance = dist;
  r.iter_deviation = 0.0;
  r.det_return = std::nan("");
  r.det_distance = std::nan("");
  r.det_deviation = std::nan("");
  return r;
}

}  // namespace

TEST_SUITE("report") {
  TEST_CASE("format_real round trips") {
    for (double x : {0.1, -1e-300, 1.0 / 3.0, 123456789.125, -0.0}) CHECK(std::stod(format_real(x)) == x);
    CHECK(format_real(std::nan("")) == "");
    CHECK(format_real(2.0) == "2");
  }

  TEST_CASE("metrics csv round trip") {
    std::ostringstream out;
    write_metrics_header(out);
    const std::vector<MetricsRow> rows{row(1, 16, 0, -50.25, 0.2), row(2, 32, 1, -1.0 / 3.0, 0.125)};
    for (const auto& r : rows) write_metrics_row(out, r);
    std::istringstream in(out.str());
    const auto back = parse_metrics_csv(in);
    REQUIRE(back.size() == 2);
    CHECK(back[1].best_return == rows[1].best_return);
    CHECK(back[1].train_episodes_so_far == 16);
    CHECK(std::isnan(back[0].det_return));
    CHECK(back[0].iter_deviation == 0.0);
    CHECK(out.str().rfind("iteration,episodes_so_far,train_episodes_so_far,task,best_return,best_distance,best_deviation", 0) == 0);
  }

  TEST_CASE("scheduler csv round trip") {
    std::ostringstream out;
    write_scheduler_header(out, 3);
    write_scheduler_row(out, {61, {0.1, -0.25, 1.0 / 7.0}, 2});
    CHECK(out.str().rfind("iteration,erp_task0,erp_task1,erp_task2,selected_task\n", 0) == 0);
    std::istringstream in(out.str());
    const auto back = parse_scheduler_csv(in);
    REQUIRE(back.size() == 1);
    CHECK(back[0].iteration == 61);
    CHECK(back[0].erp[2] == 1.0 / 7.0);
    CHECK(back[0].selected == 2);
  }

  TEST_CASE("milestone summary") {
    std::vector<MetricsRow> rows;
    long eps = 0;
    for (long k = 1; k <= 20; ++k) {
      eps += 48;
      for (std::size_t t = 0; t < 3; ++t) rows.push_back(row(k, eps, t, -100.0 + k + t, 0.3 - 0.01 * k));
    }
    const auto s = summarize(rows, 3, {480, 500, 5000});
    const auto& ms = s.at("milestones");
    REQUIRE(ms.size() == 3);
    CHECK(ms[0].at("reached") == true);
    CHECK(ms[0].at("at").at("iteration") == 10);
    CHECK(ms[1].at("at").at("iteration") == 11);
    CHECK(ms[2].at("reached") == false);
    CHECK(ms[0].at("at").at("mean_over_tasks").at("best_return").get<double>() == doctest::Approx(-89.0));
    CHECK(s.at("final").at("iteration") == 20);
    std::ostringstream text;
    print_summary(text, s);
    CHECK(text.str().find("480") != std::string::npos);
    CHECK(text.str().find("final") != std::string::npos);
  }
}
