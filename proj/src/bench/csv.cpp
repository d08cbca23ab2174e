#include "bks/csv.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "bks/errors.hpp"

namespace bks {

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

void write_records(std::ostream& out, const std::vector<IterationRecord>& records) {
  out << kRecordHeader << '\n';
  for (const auto& r : records) {
    out << r.iteration << ',' << format_double(r.forward_s) << ','
        << format_double(r.backward_compute_s) << ','
        << format_double(r.backward_comm_exposed_s) << ','
        << format_double(r.optimizer_s) << ',' << format_double(r.total_s)
        << ',' << format_double(r.loss) << '\n';
  }
}

void write_records(const std::string& path, const std::vector<IterationRecord>& records) {
  std::ofstream out(path);
  BKS_CHECK(out, UsageError, "cannot open ", path, " for writing");
  write_records(out, records);
  BKS_CHECK(out.good(), UsageError, "write to ", path, " failed");
}

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    fields.push_back(field);
  }
  if (!line.empty() && line.back() == ',') {
    fields.emplace_back();
  }
  return fields;
}

double parse_double(const std::string& s, std::size_t line_no) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  BKS_CHECK(
      !s.empty() && end == s.c_str() + s.size() && errno != ERANGE,
      UsageError,
      "line ",
      line_no,
      ": bad number '",
      s,
      "'");
  return v;
}

} // namespace

std::vector<IterationRecord> read_records(std::istream& in) {
  std::string line;
  BKS_CHECK(std::getline(in, line), UsageError, "empty CSV");
  if (!line.empty() && line.back() == '\r') {
    line.pop_back();
  }
  BKS_CHECK(
      line == kRecordHeader,
      UsageError,
      "unexpected CSV header '",
      line,
      "', expected '",
      kRecordHeader,
      "'");
  std::vector<IterationRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.empty()) {
      continue;
    }
    const auto f = split_row(line);
    BKS_CHECK(
        f.size() == 7,
        UsageError,
        "line ",
        line_no,
        ": expected 7 fields, got ",
        f.size());
    IterationRecord r;
    char* end = nullptr;
    errno = 0;
    r.iteration = std::strtoull(f[0].c_str(), &end, 10);
    BKS_CHECK(
        !f[0].empty() && end == f[0].c_str() + f[0].size() && errno == 0,
        UsageError,
        "line ",
        line_no,
        ": bad iteration '",
        f[0],
        "'");
    r.forward_s = parse_double(f[1], line_no);
    r.backward_compute_s = parse_double(f[2], line_no);
    r.backward_comm_exposed_s = parse_double(f[3], line_no);
    r.optimizer_s = parse_double(f[4], line_no);
    r.total_s = parse_double(f[5], line_no);
    r.loss = parse_double(f[6], line_no);
    records.push_back(r);
  }
  return records;
}

std::vector<IterationRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  BKS_CHECK(in, UsageError, "cannot open ", path);
  return read_records(in);
}

double percentile(std::vector<double> values, double q) {
  BKS_CHECK(!values.empty(), UsageError, "percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  return values[rank - 1];
}

LatencySummary summarize(const std::vector<IterationRecord>& records) {
  std::vector<double> totals;
  for (const auto& r : records) {
    if (r.iteration >= kWarmupIterations) {
      totals.push_back(r.total_s);
    }
  }
  LatencySummary s;
  s.samples = totals.size();
  if (totals.empty()) {
    return s;
  }
  double sum = 0.0;
  for (double t : totals) {
    sum += t;
  }
  s.mean_s = sum / static_cast<double>(totals.size());
  s.p50_s = percentile(totals, 0.50);
  s.p95_s = percentile(totals, 0.95);
  return s;
}

void write_table(
    const std::string& path,
    const std::vector<std::string>& header,
    const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path);
  BKS_CHECK(out, UsageError, "cannot open ", path, " for writing");
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << (i ? "," : "") << row[i];
    }
    out << '\n';
  };
  emit(header);
  for (const auto& row : rows) {
    emit(row);
  }
  BKS_CHECK(out.good(), UsageError, "write to ", path, " failed");
}

} // namespace bks
