#include <gtest/gtest.h>

#include <algorithm>

#include "cdssl/errors.hpp"
#include "cdssl/report.hpp"
#include "cdssl/rng.hpp"
#include "support.hpp"

using namespace cdssl;
using cdssl::testing::TempDir;

namespace {

Percent pct(std::int64_t hundredths) { return {hundredths, false}; }

ResultRow row(std::string dataset, std::string task, double fraction, std::int64_t acc, std::int64_t p = 5000,
              std::int64_t r = 5000, std::int64_t f = 5000) {
  return {std::move(dataset), std::move(task), fraction, pct(acc), pct(p), pct(r), pct(f)};
}

bool same(const ResultRow& a, const ResultRow& b) {
  return a.dataset == b.dataset && a.task == b.task && a.fraction == b.fraction && a.accuracy == b.accuracy &&
         a.precision == b.precision && a.recall == b.recall && a.f1 == b.f1;
}

}  // namespace

TEST(Report, GoldenBinaryRow) {
  const std::string md = render_report({row("aptos2019", "binary", 1.0, 9959, 10000, 9954, 9926)});
  EXPECT_NE(md.find("| 100% | 99.59 | 100.00 | 99.54 | 99.26 |"), std::string::npos) << md;
  EXPECT_NE(md.find("## aptos2019 (binary)"), std::string::npos);
  EXPECT_NE(md.find("| Labels | Accuracy | Precision | Recall | F1-Score |"), std::string::npos);
}

TEST(Report, GroupsInFirstAppearanceOrderAndSortsFractions) {
  const std::vector<ResultRow> rows{row("b", "binary", 1.0, 9000), row("a", "binary", 0.1, 7000),
                                    row("b", "binary", 0.1, 8000), row("b", "multiclass", 0.5, 6000)};
  const std::string md = render_report(rows, "synthetic desk run");
  const auto b_bin = md.find("## b (binary)"), a_bin = md.find("## a (binary)"), b_multi = md.find("## b (multiclass)");
  ASSERT_NE(b_bin, std::string::npos);
  EXPECT_LT(b_bin, a_bin);
  EXPECT_LT(a_bin, b_multi);
  EXPECT_LT(md.find("| 10% | 80.00"), md.find("| 100% | 90.00"));
  EXPECT_NE(md.find("synthetic desk run"), std::string::npos);
  EXPECT_NE(render_report({}).find("No results."), std::string::npos);
}

TEST(Report, FractionLabels) {
  const std::string md = render_report({row("d", "binary", 0.75, 1), row("d", "binary", 0.125, 2)});
  EXPECT_NE(md.find("| 75% |"), std::string::npos);
  EXPECT_NE(md.find("| 12.5% |"), std::string::npos);
  EXPECT_EQ(format_fraction(0.1), "0.1");
  EXPECT_EQ(format_fraction(1.0), "1");
}

TEST(ResultsCsv, RoundTripsRandomRows) {
  Rng rng(9);
  std::vector<ResultRow> rows;
  for (int i = 0; i < 200; ++i) {
    const double fractions[] = {0.1, 0.2, 0.3, 0.5, 0.75, 1.0};
    rows.push_back(row("set" + std::to_string(rng.below(4)), rng.bernoulli(0.5) ? "binary" : "multiclass",
                       fractions[rng.below(6)], static_cast<std::int64_t>(rng.below(10001)),
                       static_cast<std::int64_t>(rng.below(10001)), static_cast<std::int64_t>(rng.below(10001)),
                       static_cast<std::int64_t>(rng.below(10001))));
  }
  const std::string text = results_csv(rows);
  EXPECT_EQ(text.substr(0, text.find('\n')), kResultsHeader);
  const auto back = parse_results_csv(text);
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_TRUE(same(back[i], rows[i])) << "row " << i;
  EXPECT_EQ(results_csv(back), text);
}

TEST(ResultsCsv, FileRoundTrip) {
  TempDir dir;
  const std::vector<ResultRow> rows{row("messidor", "multiclass", 0.3, 6543, 1234, 5678, 9012)};
  write_results_csv(rows, dir / "results.csv");
  const auto back = read_results_csv(dir / "results.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_TRUE(same(back[0], rows[0]));
  EXPECT_THROW(read_results_csv(dir / "missing.csv"), IoError);
}

TEST(ResultsCsv, ColumnOrderIsByName) {
  const auto rows = parse_results_csv("task,dataset,f1,recall,precision,accuracy,fraction\nbinary,x,1,2,3,4,0.5\n");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].dataset, "x");
  EXPECT_EQ(rows[0].accuracy.str(), "4.00");
  EXPECT_EQ(rows[0].f1.str(), "1.00");
  EXPECT_DOUBLE_EQ(rows[0].fraction, 0.5);
}

TEST(ResultsCsv, RejectsMalformedInput) {
  const std::string header = std::string(kResultsHeader) + "\n";
  try {
    parse_results_csv("dataset,task,fraction,accuracy,precision,recall\nx,binary,1,1,1,1\n", "r.csv");
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("f1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_results_csv(header + "x,binary,1,abc,1,1,1\n"), ValidationError);
  EXPECT_THROW(parse_results_csv(header + "x,binary,1,101,1,1,1\n"), ValidationError);
  EXPECT_THROW(parse_results_csv(header + "x,binary,1,1\n"), ValidationError);
  EXPECT_TRUE(parse_results_csv(header).empty());
}

TEST(Plots, OnePerTaskWithSingletonWarning) {
  const std::vector<ResultRow> rows{row("a", "binary", 0.1, 7000), row("a", "binary", 1.0, 9000),
                                    row("b", "binary", 0.5, 8000), row("a", "multiclass", 0.5, 5000),
                                    row("a", "multiclass", 1.0, 6000)};
  const auto plots = render_plots(rows, "desk <run>");
  ASSERT_EQ(plots.size(), 2u);
  EXPECT_EQ(plots[0].task, "binary");
  EXPECT_EQ(plots[1].task, "multiclass");
  ASSERT_EQ(plots[0].warnings.size(), 1u);
  EXPECT_NE(plots[0].warnings[0].find("'b'"), std::string::npos);
  EXPECT_TRUE(plots[1].warnings.empty());
  EXPECT_EQ(plots[0].svg.rfind("<svg", 0), 0u);
  EXPECT_NE(plots[0].svg.find("desk &lt;run&gt;"), std::string::npos);
  EXPECT_GT(std::count(plots[0].svg.begin(), plots[0].svg.end(), '\n'), 10);
}

TEST(Plots, DeterministicAndOrderInsensitiveWithinSeries) {
  const std::vector<ResultRow> a{row("a", "binary", 0.1, 7000), row("a", "binary", 1.0, 9000)};
  const std::vector<ResultRow> b{row("a", "binary", 1.0, 9000), row("a", "binary", 0.1, 7000)};
  EXPECT_EQ(render_plots(a)[0].svg, render_plots(a)[0].svg);
  EXPECT_EQ(render_plots(a)[0].svg, render_plots(b)[0].svg);
  EXPECT_TRUE(render_plots({}).empty());
}
