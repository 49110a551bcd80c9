#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include "cpqr/io.hpp"

namespace cpqr {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() / ("cpqr_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
  static inline int counter_ = 0;
};

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run_cli(const std::string& args, const fs::path& stdout_file) {
  const std::string cmd = std::string(CPQR_CLI_PATH) + " " + args + " > " + stdout_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(stdout_file);
  return r;
}

std::string dataset_csv(const Dataset& d) {
  std::ostringstream os;
  os << std::setprecision(17) << "y";
  for (Index j = 0; j < d.p(); ++j) os << ",x" << j + 1;
  os << '\n';
  for (Index i = 0; i < d.n(); ++i) {
    os << d.y()[i];
    for (Index j = 0; j < d.p(); ++j) os << ',' << d.x()(i, j);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// ingestion

TEST(IngestCsv, SmallFile) {
  std::istringstream in("y,x1\n1,1\n2,1\n3,1\n");
  const Dataset d = io::ingest_csv(in);
  EXPECT_EQ(d.n(), 3);
  EXPECT_EQ(d.p(), 1);
  EXPECT_EQ(d.y(), (Vector(3) << 1, 2, 3).finished());
  EXPECT_TRUE((d.x().array() == 1.0).all());
}

TEST(IngestCsv, YColumnAnywhereAndCovariateOrderKept) {
  std::istringstream in("a, y ,b\r\n1.5,-2e1,+3\r\n\n4,5,6\n");
  const Dataset d = io::ingest_csv(in);
  EXPECT_EQ(d.n(), 2);
  EXPECT_EQ(d.p(), 2);
  EXPECT_DOUBLE_EQ(d.y()[0], -20.0);
  EXPECT_DOUBLE_EQ(d.x()(0, 0), 1.5);
  EXPECT_DOUBLE_EQ(d.x()(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(d.x()(1, 1), 6.0);
  std::istringstream names("a, y ,b\n");
  EXPECT_EQ(io::csv_covariate_names(names), (std::vector<std::string>{"a", "b"}));
}

TEST(IngestCsv, DiagnosticsNameRowAndColumn) {
  auto expect_parse_error = [](const std::string& text, std::size_t row, std::size_t col) {
    std::istringstream in(text);
    try {
      io::ingest_csv(in);
      ADD_FAILURE() << "no error for: " << text;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.row(), row) << text;
      EXPECT_EQ(e.col(), col) << text;
    }
  };
  expect_parse_error("y,x1\n1,2\n3,\n", 3, 2);      // missing cell
  expect_parse_error("y,x1\n1,2\n3,abc\n", 3, 2);   // non-numeric
  expect_parse_error("y,x1\n1,2\n3\n", 3, 2);       // short row
  expect_parse_error("y,x1\n1,2,4\n", 2, 3);        // long row
  expect_parse_error("y,x1\nnan,1\n", 2, 1);        // non-finite
  expect_parse_error("y,x1\n1.2.3,1\n", 2, 1);
  expect_parse_error("a,b\n1,2\n", 1, 1);           // no y column
  expect_parse_error("y,y,x\n1,2,3\n", 1, 2);
}

TEST(IngestCsv, EmptyInputs) {
  std::istringstream none("");
  EXPECT_THROW(io::ingest_csv(none), EmptyFile);
  std::istringstream only_y("y\n1\n2\n");
  EXPECT_THROW(io::ingest_csv(only_y), EmptyFile);
  std::istringstream no_rows("y,x1\n");
  EXPECT_THROW(io::ingest_csv(no_rows), EmptyFile);
  EXPECT_THROW(io::ingest_csv(std::string("/nonexistent/file.csv")), InvalidArgument);
}

// ---------------------------------------------------------------------------
// fit reports

io::FitReport fitted_report(const std::string& method) {
  const ScenarioTruth t = study_scenario(ErrorLaw::Normal01, 60);
  auto rng = RngStream{4, 0}.engine();
  io::FitReport r;
  r.data = generate_dataset(t, 60, rng);
  r.method.name = method;
  r.method.tau = 0.5;
  r.k = 2;
  SearchConfig sc;
  sc.grid_step = 3;
  r.min_segment = sc.resolve_min_segment(r.data.p());
  r.fit = detect_changepoints(r.data, 2, r.method.to_method(), sc);
  return r;
}

TEST(FitJson, RoundTripRecertifiesIdentically) {
  TempDir dir;
  for (const std::string method : {"scad", "lasso-type", "quantile"}) {
    const io::FitReport r = fitted_report(method);
    io::save_fit(r, (dir / "fit.json").string());
    const io::FitReport back = io::load_fit((dir / "fit.json").string());
    EXPECT_EQ(back.fit.segmentation.breaks, r.fit.segmentation.breaks);
    EXPECT_EQ(back.data.y(), r.data.y());
    EXPECT_EQ(back.data.x(), r.data.x());
    const auto before = io::recertify(r);
    const auto after = io::recertify(back);
    ASSERT_TRUE(before.ok()) << method;
    ASSERT_EQ(before.residuals.size(), 3u);
    for (std::size_t s = 0; s < 3; ++s) {
      EXPECT_EQ(back.fit.segment_fits[s].coefficients, r.fit.segment_fits[s].coefficients);
      EXPECT_EQ(after.residuals[s], before.residuals[s]) << method;
      EXPECT_EQ(after.residuals[s], r.fit.segment_fits[s].kkt_residual) << method;
    }
  }
}

TEST(FitJson, TamperedCoefficientsFailRecertification) {
  io::FitReport r = fitted_report("lasso-type");
  r.fit.segment_fits[1].coefficients[0] += 0.5;
  EXPECT_FALSE(io::recertify(r).ok());
  io::FitReport s = fitted_report("scad");
  s.fit.segmentation.breaks[0] += 1;
  EXPECT_FALSE(io::recertify(s).breaks_consistent);
}

TEST(FitJson, MalformedFileIsParseError) {
  TempDir dir;
  write_file(dir / "bad.json", "{\"method\": 3}");
  EXPECT_THROW(io::load_fit((dir / "bad.json").string()), ParseError);
}

// ---------------------------------------------------------------------------
// tables

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

MetricsReport tiny_report() {
  const ScenarioTruth t = study_scenario(ErrorLaw::ShiftedExp, 200);
  std::vector<ReplicationOutcome> outs(2);
  outs[0].breaks = {30, 100};
  outs[0].coefficients = t.coef;
  outs[1].breaks = {31, 100};
  outs[1].coefficients = t.coef;
  outs[1].coefficients[2][0] = 1.25;
  MetricsReport rep;
  rep.law = t.law;
  rep.n = 200;
  rep.reps = 2;
  rep.seed = 5;
  rep.tau_star = t.tau_star;
  rep.true_breaks = t.breaks;
  rep.methods.push_back(aggregate_outcomes("lasso-type", t.tau_star, t, outs, 0.05));
  rep.methods.push_back(aggregate_outcomes("scad", t.tau_star, t, outs, 0.05));
  return rep;
}

TEST(Tables, CsvLayout) {
  const auto lines = lines_of(io::render_metrics(tiny_report(), io::Format::Csv));
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_NE(lines[0].find("tau_star=0.77687"), std::string::npos);
  EXPECT_EQ(lines[1], "Method,lasso-type,scad");
  EXPECT_EQ(lines[2], "\"median of (l1,l2)\",\"(30.5,100)\",\"(30.5,100)\"");
  EXPECT_EQ(lines[3], "% of true 0,100.0,100.0");
  EXPECT_EQ(lines[4], "% of false 0,0.0,0.0");
  EXPECT_EQ(lines[5], "replications,2,2");
  EXPECT_EQ(lines[6], "failures,0,0");
}

TEST(Tables, MarkdownLayout) {
  const auto lines = lines_of(io::render_metrics(tiny_report(), io::Format::Markdown));
  ASSERT_EQ(lines.size(), 9u);
  EXPECT_EQ(lines[2], "| Method | lasso-type | scad |");
  EXPECT_EQ(lines[3], "|---|---|---|");
  for (std::size_t i = 2; i < lines.size(); ++i) EXPECT_EQ(std::count(lines[i].begin(), lines[i].end(), '|'), 4) << i;
}

TEST(Tables, L1ErrorLayoutAndJson) {
  const MetricsReport rep = tiny_report();
  const auto lines = lines_of(io::render_l1_errors(rep, io::Format::Csv));
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[1], "segment,lasso-type,scad");
  EXPECT_EQ(lines[2], "1,0.000,0.000");
  // 0.25 error on one of five coordinates in one of two replications
  EXPECT_EQ(lines[4], "3,0.025,0.025");
  const auto j = io::json::parse(io::render_metrics(rep, io::Format::Json));
  EXPECT_NEAR(j.at("tau_star").get<double>(), 0.77687, 1e-5);
  EXPECT_EQ(j.at("methods").size(), 2u);
  EXPECT_EQ(j.at("methods")[0].at("median_breaks")[0].get<double>(), 30.5);
  const auto k = io::json::parse(io::render_l1_errors(rep, io::Format::Json));
  EXPECT_DOUBLE_EQ(k.at("l1_error").at("scad")[2].get<double>(), 0.025);
}

TEST(Tables, FitRendering) {
  const io::FitReport r = fitted_report("lasso-type");
  const auto csv = lines_of(io::render_fit(r, io::Format::Csv));
  ASSERT_EQ(csv.size(), 5u);
  EXPECT_EQ(csv[1].substr(0, 52), "segment,start,end,length,objective,kkt_residual,acti");
  EXPECT_EQ(std::count(csv[2].begin(), csv[2].end(), ','), 6 + 10);
  const auto j = io::json::parse(io::render_fit(r, io::Format::Json));
  EXPECT_EQ(j.at("breaks").get<std::vector<Index>>(), r.fit.segmentation.breaks);
}

// ---------------------------------------------------------------------------
// command line

TEST(Cli, NoiseFreeFitPrintsExactBreaks) {
  TempDir dir;
  const ScenarioTruth t = study_scenario(ErrorLaw::Normal01, 200);
  auto rng = RngStream{21, 0}.engine();
  write_file(dir / "data.csv", dataset_csv(generate_dataset(t, 200, rng, true)));
  const auto r = run_cli("fit --input " + (dir / "data.csv").string() + " --k 2 --method lasso-type --out csv --save " +
                             (dir / "fit.json").string(),
                         dir / "out.txt");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("breaks=30;100"), std::string::npos) << r.out;
  const auto lines = lines_of(r.out);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[2].substr(0, 10), "1,1,30,30,");
  const auto check = run_cli("check --fit " + (dir / "fit.json").string(), dir / "check.txt");
  EXPECT_EQ(check.code, 0) << check.out;
}

TEST(Cli, SingleSegmentAndFormats) {
  TempDir dir;
  write_file(dir / "d.csv", "y,x1\n1,1\n2,1\n3,1\n4,1\n5,1\n");
  const auto r = run_cli("fit --input " + (dir / "d.csv").string() + " --k 0 --method quantile --min-segment 2 --out json", dir / "o");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = io::json::parse(r.out);
  EXPECT_TRUE(j.at("breaks").empty());
  EXPECT_EQ(j.at("segments").size(), 1u);
  EXPECT_DOUBLE_EQ(j.at("segments")[0].at("coefficients")[0].get<double>(), 3.0);
}

TEST(Cli, ExitCodes) {
  TempDir dir;
  write_file(dir / "d.csv", "y,x1\n1,1\n2,1\n3,1\n");
  write_file(dir / "bad.csv", "y,x1\n1,1\n2,oops\n");
  const std::string d = (dir / "d.csv").string();
  EXPECT_EQ(run_cli("fit --input " + d + " --k 3", dir / "o").code, 2);
  const auto bad = run_cli("fit --input " + (dir / "bad.csv").string() + " --k 0", dir / "o");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("row 3, column 2"), std::string::npos) << bad.out;
  EXPECT_EQ(run_cli("fit --input " + d + " --method lasso", dir / "o").code, 1);
  EXPECT_EQ(run_cli("fit --input " + d + " --k 0 --tau 1.5", dir / "o").code, 1);
  EXPECT_EQ(run_cli("frobnicate", dir / "o").code, 1);
  EXPECT_EQ(run_cli("check", dir / "o").code, 1);
  EXPECT_EQ(run_cli("--help", dir / "o").code, 0);
}

TEST(Cli, TamperedFitFailsCheck) {
  TempDir dir;
  const io::FitReport r = fitted_report("scad");
  io::save_fit(r, (dir / "fit.json").string());
  EXPECT_EQ(run_cli("check --fit " + (dir / "fit.json").string(), dir / "o").code, 0);
  auto j = io::json::parse(read_file(dir / "fit.json"));
  j["segments"][2]["coefficients"][1] = j["segments"][2]["coefficients"][1].get<double>() + 1.0;
  write_file(dir / "tampered.json", j.dump());
  const auto t = run_cli("check --fit " + (dir / "tampered.json").string(), dir / "o");
  EXPECT_EQ(t.code, 4) << t.out;
  EXPECT_NE(t.out.find("FAIL"), std::string::npos);
}

TEST(Cli, ExpectedGSweep) {
  TempDir dir;
  const auto r = run_cli("check --prop1 --samples 20000 --seed 3", dir / "o");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("60 estimates, 0 below"), std::string::npos) << r.out;
}

TEST(Cli, SimulateIsDeterministicAndReportsTauStar) {
  TempDir dir;
  const std::string args = "simulate --law exp --n 60 --reps 3 --seed 7 --grid-step 4 --methods lasso-type,quantile";
  const auto a = run_cli(args + " --threads 1 --out csv", dir / "a");
  const auto b = run_cli(args + " --threads 2 --out csv", dir / "b");
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("tau_star=0.77687"), std::string::npos) << a.out;
  EXPECT_NE(a.out.find("Method,lasso-type,quantile"), std::string::npos) << a.out;

  const auto c = run_cli(args + " --out json --outdir " + (dir / "tables").string(), dir / "c");
  ASSERT_EQ(c.code, 0) << c.out;
  const auto j = io::json::parse(read_file(dir / "tables" / "table_exp_n60.json"));
  EXPECT_NEAR(j.at("tau_star").get<double>(), 0.77687, 1e-5);
  EXPECT_EQ(j.at("true_breaks").get<std::vector<Index>>(), (std::vector<Index>{17, 40}));
  // lasso-type is fit at the median, the plain quantile fit at F(0)
  EXPECT_DOUBLE_EQ(j.at("methods")[0].at("tau").get<double>(), 0.5);
  EXPECT_NEAR(j.at("methods")[1].at("tau").get<double>(), 0.77687, 1e-5);
  EXPECT_TRUE(fs::exists(dir / "tables" / "l1_error_exp_n60.json"));
  EXPECT_EQ(run_cli("simulate --law gamma", dir / "d").code, 1);
}

}  // namespace
}  // namespace cpqr
