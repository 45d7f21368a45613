#include "nlden/report.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "nlden/error.hpp"

namespace nlden {
namespace {

using json = nlohmann::ordered_json;

std::string format_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

double parse_number(const std::string& cell, std::size_t line) {
  if (cell == "inf" || cell == "+inf") return kPsnrIdentical;
  if (cell == "-inf") return -kPsnrIdentical;
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorKind::Format, "metrics CSV line " + std::to_string(line) + ": '" + cell +
                                       "' is not a number");
  }
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

json number_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

json row_json(const MetricsRow& r) {
  return {{"image_id", r.image_id},
          {"psnr_input", number_json(r.psnr_input)},
          {"psnr_a", number_json(r.psnr_a)},
          {"psnr_b", number_json(r.psnr_b)},
          {"ssim_input", number_json(r.ssim_input)},
          {"ssim_a", number_json(r.ssim_a)},
          {"ssim_b", number_json(r.ssim_b)}};
}

json test_json(const std::optional<PairedTestResult>& t) {
  if (!t) return nullptr;
  return {{"n", t->n},
          {"mean_diff", t->mean_diff},
          {"sd_diff", t->sd_diff},
          {"t_stat", t->t_stat},
          {"df", t->df},
          {"p_two_sided", t->p_two_sided}};
}

json ci_json(const std::optional<Interval>& ci) {
  if (!ci) return nullptr;
  return {{"level", 0.95}, {"lo", ci->lo}, {"hi", ci->hi}};
}

json box_to_json(const BoxSummary& b) {
  return {{"min", b.min},         {"q1", b.q1},
          {"median", b.median},   {"q3", b.q3},
          {"max", b.max},         {"whisker_lo", b.whisker_lo},
          {"whisker_hi", b.whisker_hi}, {"outliers", b.outliers}};
}

}  // namespace

MetricsRow mean_row(std::span<const MetricsRow> rows) {
  if (rows.empty()) throw Error(ErrorKind::Parameter, "report needs at least one row");
  MetricsRow m;
  m.image_id = "Mean";
  for (const MetricsRow& r : rows) {
    m.psnr_input += r.psnr_input;
    m.psnr_a += r.psnr_a;
    m.psnr_b += r.psnr_b;
    m.ssim_input += r.ssim_input;
    m.ssim_a += r.ssim_a;
    m.ssim_b += r.ssim_b;
  }
  const double n = static_cast<double>(rows.size());
  m.psnr_input /= n;
  m.psnr_a /= n;
  m.psnr_b /= n;
  m.ssim_input /= n;
  m.ssim_a /= n;
  m.ssim_b /= n;
  return m;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out(kMetricsCsvHeader);
  out += '\n';
  auto emit = [&](const MetricsRow& r) {
    out += r.image_id;
    for (double v : {r.psnr_input, r.psnr_a, r.psnr_b, r.ssim_input, r.ssim_a, r.ssim_b}) {
      out += ',' + format_number(v);
    }
    out += '\n';
  };
  for (const MetricsRow& r : rows) emit(r);
  emit(mean_row(rows));
  return out;
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  std::vector<MetricsRow> rows;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != kMetricsCsvHeader) {
        throw Error(ErrorKind::Format, "metrics CSV header must be '" + std::string(kMetricsCsvHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
    if (cells.size() != 7) {
      throw Error(ErrorKind::Format, "metrics CSV line " + std::to_string(line_no) + " has " +
                                         std::to_string(cells.size()) + " fields, expected 7");
    }
    if (cells[0] == "Mean") continue;
    rows.push_back({cells[0], parse_number(cells[1], line_no), parse_number(cells[2], line_no),
                    parse_number(cells[3], line_no), parse_number(cells[4], line_no),
                    parse_number(cells[5], line_no), parse_number(cells[6], line_no)});
  }
  if (!header_seen) throw Error(ErrorKind::Format, "metrics CSV is empty");
  return rows;
}

EvaluationReport build_report(std::vector<MetricsRow> rows) {
  EvaluationReport r;
  r.mean = mean_row(rows);
  std::vector<double> pa, pb, sa, sb, dp, ds;
  for (const MetricsRow& row : rows) {
    pa.push_back(row.psnr_a);
    pb.push_back(row.psnr_b);
    sa.push_back(row.ssim_a);
    sb.push_back(row.ssim_b);
    dp.push_back(row.psnr_b - row.psnr_a);
    ds.push_back(row.ssim_b - row.ssim_a);
  }
  r.rows = std::move(rows);
  auto attempt = [&](auto&& fn, const char* what) {
    try {
      fn();
    } catch (const Error& e) {
      r.notes.push_back(std::string(what) + ": " + e.what());
    }
  };
  attempt([&] { r.psnr_test = paired_t_test(pa, pb); }, "psnr paired t-test");
  attempt([&] { r.ssim_test = paired_t_test(sa, sb); }, "ssim paired t-test");
  attempt([&] { r.psnr_gain_ci = delta_ci(dp); }, "psnr gain CI");
  attempt([&] { r.ssim_gain_ci = delta_ci(ds); }, "ssim gain CI");
  r.psnr_gain_box = box_summary(dp);
  r.ssim_gain_box = box_summary(ds);
  return r;
}

std::string report_json(const EvaluationReport& report) {
  json j;
  json rows = json::array();
  for (const MetricsRow& r : report.rows) rows.push_back(row_json(r));
  j["rows"] = rows;
  j["mean"] = row_json(report.mean);
  j["paired_t_test"] = {{"psnr", test_json(report.psnr_test)}, {"ssim", test_json(report.ssim_test)}};
  j["gain_ci"] = {{"psnr", ci_json(report.psnr_gain_ci)}, {"ssim", ci_json(report.ssim_gain_ci)}};
  j["notes"] = report.notes;
  return j.dump(2) + "\n";
}

std::string box_json(const EvaluationReport& report) {
  json j;
  j["psnr_gain"] = box_to_json(report.psnr_gain_box);
  j["ssim_gain"] = box_to_json(report.ssim_gain_box);
  return j.dump(2) + "\n";
}

}  // namespace nlden
