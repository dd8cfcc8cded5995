#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cdssl/metrics.hpp"

namespace cdssl {

inline constexpr const char* kResultsHeader = "dataset,task,fraction,accuracy,precision,recall,f1";

struct ResultRow {
  std::string dataset;
  std::string task;
  double fraction = 0.0;
  Percent accuracy;
  Percent precision;
  Percent recall;
  Percent f1;
};

std::string format_fraction(double fraction);
std::string results_csv(const std::vector<ResultRow>& rows);
void write_results_csv(const std::vector<ResultRow>& rows, const std::filesystem::path& path);
std::vector<ResultRow> parse_results_csv(const std::string& text, const std::string& origin = "<csv>");
std::vector<ResultRow> read_results_csv(const std::filesystem::path& path);

/// One markdown table per (dataset, task) in order of first appearance,
/// fraction rows ascending, metrics to two decimals. `provenance` (if not
/// empty) is printed under the title.
std::string render_report(const std::vector<ResultRow>& rows, const std::string& provenance = {});

struct PlotOutput {
  std::string task;
  std::string svg;
  std::vector<std::string> warnings;  // e.g. series with a single point
};

/// One accuracy-vs-fraction line chart per task, one series per dataset.
std::vector<PlotOutput> render_plots(const std::vector<ResultRow>& rows, const std::string& provenance = {});

}  // namespace cdssl
