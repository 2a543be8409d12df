#include <catch_amalgamated.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "flowcoh/error.hpp"
#include "flowcoh/log.hpp"
#include "flowcoh/pipeline.hpp"

using namespace flowcoh;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("flowcoh_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    FAIL("missing column " << name);
    return 0;
  }
};

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in);
  Table t;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (t.header.empty()) {
      t.header = f;
    } else {
      t.rows.push_back(f);
    }
  }
  return t;
}

nlohmann::json read_json_file(const fs::path& path) { return nlohmann::json::parse(read_text(path)); }

PipelineConfig base_config(const fs::path& out) {
  PipelineConfig c;
  c.output_dir = out;
  c.gmm_replicates = 5;
  return c;
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(FLOWCOH_CLI) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("configuration defaults follow the analysis settings", "[pipeline][config]") {
  const PipelineConfig c;
  CHECK(c.n_triple == 500);
  CHECK(c.delta == 1.0);
  CHECK(c.n_tapers == 40);
  CHECK(c.effective_time_bandwidth() == 20.5);
  CHECK(c.f_max == 0.05);
  CHECK(c.n_freqs == 500);
  CHECK(c.alpha == 0.05);
  CHECK(c.gmm_components == 4);
  CHECK(c.gmm_lambda == 0.001);
  CHECK(c.gmm_replicates == 1000);
  CHECK_NOTHROW(validate(c));
}

TEST_CASE("settings parse from key=value text", "[pipeline][config]") {
  PipelineConfig c;
  apply_setting(c, "n-tapers", "5");
  apply_setting(c, "time_bandwidth", "3");
  apply_setting(c, "gmm_covariance", "diagonal");
  apply_setting(c, "malformed", "skip");
  apply_setting(c, "delimiter", "tab");
  apply_setting(c, "has_header", "true");
  apply_setting(c, "synth_kind", "hawkes");
  apply_setting(c, "input", "a.csv,b.csv");
  CHECK(c.n_tapers == 5);
  CHECK(c.effective_time_bandwidth() == 3.0);
  CHECK(c.gmm_covariance == CovarianceType::kDiagonal);
  CHECK(c.malformed == MalformedPolicy::kSkip);
  CHECK(c.format.delimiter == '\t');
  CHECK(c.format.has_header);
  CHECK(c.generator.kind == GeneratorKind::kHawkes);
  CHECK(c.inputs == std::vector<fs::path>{"a.csv", "b.csv"});

  CHECK_THROWS_AS(apply_setting(c, "no_such_key", "1"), ValidationError);
  CHECK_THROWS_AS(apply_setting(c, "n_tapers", "five"), ValidationError);
  CHECK_THROWS_AS(apply_setting(c, "alpha", "0.05x"), ValidationError);
  CHECK_THROWS_AS(apply_setting(c, "malformed", "ignore"), ValidationError);

  for (const auto& key : {"n_triple", "delta", "n_tapers", "f_max", "n_freqs", "alpha", "gmm_components",
                          "gmm_lambda", "gmm_replicates", "seed", "workers", "output_dir"}) {
    CHECK(std::find(setting_keys().begin(), setting_keys().end(), key) != setting_keys().end());
  }
}

TEST_CASE("config files load with comments and sections", "[pipeline][config]") {
  const auto dir = scratch_dir("config");
  write_text(dir / "run.conf",
             "# analysis\n[analyze]\nn_tapers = 5 \n; comment\n\nf_max=0.02\nalpha = 0.1\n");
  PipelineConfig c;
  load_config_file(c, dir / "run.conf");
  CHECK(c.n_tapers == 5);
  CHECK(c.f_max == 0.02);
  CHECK(c.alpha == 0.1);
  // flags applied afterwards override the file
  apply_setting(c, "n_tapers", "7");
  CHECK(c.n_tapers == 7);

  write_text(dir / "bad.conf", "n_tapers\n");
  CHECK_THROWS_AS(load_config_file(c, dir / "bad.conf"), ValidationError);
  CHECK_THROWS_AS(load_config_file(c, dir / "missing.conf"), ValidationError);
}

TEST_CASE("invalid configurations are rejected", "[pipeline][config]") {
  PipelineConfig c;
  c.f_max = 0.6;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.alpha = 1.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.n_tapers = 1;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.delta = 2.0;
  c.f_max = 0.3;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = {};
  c.generator.hawkes_alpha = 2.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
}

TEST_CASE("toy three-device file gives one triple", "[pipeline][ingest]") {
  const auto dir = scratch_dir("toy");
  write_text(dir / "flows.csv", "0,A,B\n1,A,B\n1,B,C\n5,B,C\n3,A,B\n");
  auto c = base_config(dir / "out");
  c.inputs = {dir / "flows.csv"};
  WarningCapture w;
  const auto s = cmd_ingest(c);
  CHECK(s.n_events == 5);
  CHECK(s.n_triples == 1);
  const auto m = read_json_file(dir / "out" / "manifest.json");
  REQUIRE(m["triples"].size() == 1);
  CHECK(m["triples"][0]["a"] == "A");
  CHECK(m["triples"][0]["c"] == "C");
  CHECK(m["triples"][0]["K"] == 6);
  CHECK(m.contains("generated_at"));

  const auto series = read_table(dir / "out" / "series" / "triple_0000.csv");
  CHECK(series.header == std::vector<std::string>{"k", "count_ab", "count_bc"});
  REQUIRE(series.rows.size() == 6);
  const std::vector<std::string> ab = {"1", "1", "0", "1", "0", "0"};
  const std::vector<std::string> bc = {"0", "1", "0", "0", "0", "1"};
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(series.rows[k][1] == ab[k]);
    CHECK(series.rows[k][2] == bc[k]);
  }
  const auto g = read_json_file(dir / "out" / "graph_summary.json");
  CHECK(g["n_nodes"] == 3);
  CHECK(g["n_unique_edges"] == 2);
}

TEST_CASE("empty input writes an empty manifest with a warning", "[pipeline][ingest]") {
  const auto dir = scratch_dir("empty");
  write_text(dir / "flows.csv", "");
  auto c = base_config(dir / "out");
  c.inputs = {dir / "flows.csv"};
  WarningCapture w;
  const auto s = cmd_ingest(c);
  CHECK(s.n_triples == 0);
  CHECK(w.contains("empty manifest"));
  CHECK(read_json_file(dir / "out" / "manifest.json")["triples"].empty());

  CHECK(run_cli("ingest " + (dir / "flows.csv").string() + " --output-dir " + (dir / "cli").string(),
                dir / "log.txt") == 0);
  CHECK(read_text(dir / "log.txt").find("warning") != std::string::npos);
}

TEST_CASE("synthetic batches round-trip counts exactly", "[pipeline][ingest][oracle]") {
  const auto dir = scratch_dir("conservation");
  auto c = base_config(dir);
  c.generator.kind = GeneratorKind::kCoupledThinning;
  c.generator.duration = 4000.0;
  c.generator.coupling = 0.5;
  c.generator.background_rate = 0.02;
  c.synth_pairs = 4;
  c.seed = 17;
  const auto n = cmd_synth(c);

  // independent count of the generated records per edge
  std::map<std::pair<std::string, std::string>, std::uint64_t> edges;
  {
    std::ifstream in(dir / "flows.csv");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string t, s, d;
      std::getline(ss, t, ',');
      std::getline(ss, s, ',');
      std::getline(ss, d, ',');
      ++edges[{s, d}];
      ++lines;
    }
    CHECK(lines == n);
  }

  c.inputs = {dir / "flows.csv"};
  c.n_triple = 4;
  const auto s = cmd_ingest(c);
  CHECK(s.n_events == n);
  CHECK(s.n_triples == 4);
  const auto m = read_json_file(dir / "manifest.json");
  for (const auto& t : m["triples"]) {
    const auto series = read_table(dir / t["series"].get<std::string>());
    std::uint64_t ab = 0, bc = 0;
    for (const auto& row : series.rows) {
      ab += std::stoull(row[1]);
      bc += std::stoull(row[2]);
    }
    CHECK(ab == t["count_ab"].get<std::uint64_t>());
    CHECK(bc == t["count_bc"].get<std::uint64_t>());
    CHECK(ab == edges.at({t["a"].get<std::string>(), t["b"].get<std::string>()}));
    CHECK(bc == edges.at({t["b"].get<std::string>(), t["c"].get<std::string>()}));
    CHECK(series.rows.size() == t["K"].get<std::size_t>());
  }
}

TEST_CASE("analyze: identical channels are fully coherent", "[pipeline][analyze]") {
  const auto dir = scratch_dir("identical");
  std::mt19937_64 rng(4);
  std::ostringstream flows;
  for (int t = 0; t < 3000; ++t) {
    if (rng() % 7 == 0) flows << t << ",X,Y\n" << t << ",Y,Z\n";
  }
  write_text(dir / "flows.csv", flows.str());
  auto c = base_config(dir);
  c.inputs = {dir / "flows.csv"};
  c.n_tapers = 5;
  cmd_ingest(c);
  const auto s = cmd_analyze(c);
  CHECK(s.n_analyzed == 1);
  const auto coh = read_table(dir / "coherence" / "triple_0000.csv");
  CHECK(coh.header ==
        std::vector<std::string>{"f_hz", "coherence", "lower", "upper", "significant", "thresholded"});
  REQUIRE(coh.rows.size() == 500);
  for (const auto& row : coh.rows) {
    CHECK(std::stod(row[coh.col("coherence")]) == Approx(1.0).margin(1e-9));
    CHECK(row[coh.col("significant")] == "1");
  }
  const auto spec = read_table(dir / "spectra" / "triple_0000.csv");
  CHECK(spec.header == std::vector<std::string>{"f_hz", "S11", "S22", "re_S12", "im_S12", "coherence"});
}

TEST_CASE("analyze: more tapers smooth the null coherence", "[pipeline][analyze][montecarlo]") {
  // Independent channels: mean coherence is about 1/L.
  const auto dir = scratch_dir("smoothing");
  auto c = base_config(dir);
  c.generator.kind = GeneratorKind::kPoisson;
  c.generator.duration = 20000.0;
  c.synth_pairs = 12;
  c.seed = 5;
  cmd_synth(c);
  c.inputs = {dir / "flows.csv"};
  c.n_triple = 12;
  cmd_ingest(c);
  std::map<std::size_t, double> means;
  for (std::size_t l : {5, 40}) {
    c.n_tapers = l;
    cmd_analyze(c);
    const auto a = read_json_file(dir / "analysis.json");
    double mean = 0.0;
    for (const auto& t : a["triples"]) mean += t["mean_coherence"].get<double>();
    mean /= 12.0;
    CAPTURE(l, mean);
    CHECK(mean == Approx(1.0 / static_cast<double>(l)).epsilon(0.2));
    means[l] = mean;
  }
  CHECK(means[40] < means[5] / 4.0);
}

TEST_CASE("analyze skips triples too short for the taper set", "[pipeline][analyze]") {
  const auto dir = scratch_dir("short");
  write_text(dir / "flows.csv", "0,A,B\n1,A,B\n2,B,C\n");
  auto c = base_config(dir);
  c.inputs = {dir / "flows.csv"};
  cmd_ingest(c);
  WarningCapture w;
  const auto s = cmd_analyze(c);
  CHECK(s.n_analyzed == 0);
  CHECK(s.n_skipped == 1);
  CHECK(w.contains("skipping triple 0"));
}

TEST_CASE("cluster: planted profiles, C=1 and malformed input", "[pipeline][cluster]") {
  const auto dir = scratch_dir("cluster");
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 0.01);
  std::ostringstream csv;
  csv << "triple";
  for (int j = 1; j <= 12; ++j) csv << ',' << j * 0.001;
  csv << '\n';
  for (int i = 0; i < 20; ++i) {
    csv << i;
    for (int j = 0; j < 12; ++j) {
      const double bump = (i % 2 == 0) ? (j == 2 ? 0.5 : 0.0) : (j == 9 ? 0.5 : 0.0);
      csv << ',' << bump + noise(rng);
    }
    csv << '\n';
  }
  write_text(dir / "profiles.csv", csv.str());

  auto c = base_config(dir);
  c.gmm_components = 2;
  const auto counts = cmd_cluster(c);
  CHECK(counts.n_profiles == 20);
  CHECK(counts.cluster_sizes == std::vector<std::size_t>{10, 10});
  const auto assignments = read_table(dir / "assignments.csv");
  REQUIRE(assignments.rows.size() == 20);
  const std::string even = assignments.rows[0][1], odd = assignments.rows[1][1];
  CHECK(even != odd);
  for (std::size_t i = 0; i < 20; ++i) CHECK(assignments.rows[i][1] == (i % 2 == 0 ? even : odd));

  const auto means = read_table(dir / "cluster_means.csv");
  CHECK(means.header == std::vector<std::string>{"f_hz", "mean_1", "std_1", "mean_2", "std_2"});
  CHECK(means.rows.size() == 12);

  c.gmm_components = 1;
  CHECK(cmd_cluster(c).cluster_sizes == std::vector<std::size_t>{20});
  const auto model = read_json_file(dir / "model.json");
  CHECK(model["components"][0]["weight"].get<double>() == Approx(1.0));

  c.gmm_components = 21;
  CHECK_THROWS_AS(cmd_cluster(c), ValidationError);

  // a profile row with the wrong dimension
  write_text(dir / "bad.csv", "triple,0.001,0.002\n0,0.1,0.2\n1,0.3\n");
  c.gmm_components = 1;
  c.profiles = dir / "bad.csv";
  CHECK_THROWS_AS(cmd_cluster(c), DataError);
}

TEST_CASE("full pipeline through the command-line tool", "[pipeline][cli]") {
  const auto dir = scratch_dir("cli");
  const auto out = (dir / "out").string();
  const auto log = dir / "log.txt";
  REQUIRE(run_cli("synth --output-dir " + out +
                      " --synth-kind modulated_poisson --synth-pairs 3 --synth-duration 7200 --seed 3",
                  log) == 0);
  REQUIRE(run_cli("ingest " + out + "/flows.csv --output-dir " + out + " --n-triple 3", log) == 0);
  REQUIRE(run_cli("analyze --output-dir " + out + " --n-tapers 5", log) == 0);
  REQUIRE(run_cli("cluster --output-dir " + out + " --gmm-components 2 --gmm-replicates 4 --gmm-covariance diagonal",
                  log) == 0);
  REQUIRE(run_cli("report --output-dir " + out, log) == 0);
  CHECK(read_text(log).find("report:") != std::string::npos);

  const auto report = read_table(dir / "out" / "report.csv");
  CHECK(report.header == std::vector<std::string>{"triple", "f_hz", "series", "value"});
  CHECK(report.rows.size() > 3 * 500);

  // a config file supplies settings, flags override it
  write_text(dir / "run.conf", "output_dir = " + out + "\nn_tapers = 9\ntime_bandwidth = 3\n");
  CHECK(run_cli("--config " + (dir / "run.conf").string() + " analyze --n-tapers 5", log) == 0);
  CHECK(read_text(log).find("warning") == std::string::npos);
  // 9 tapers at NW = 3 is legal but warns about 2NW-1
  CHECK(run_cli("--config " + (dir / "run.conf").string() + " analyze", log) == 0);
  CHECK(read_text(log).find("exceeds 2*NW-1") != std::string::npos);
}

TEST_CASE("command-line exit codes", "[pipeline][cli]") {
  const auto dir = scratch_dir("exit");
  const auto log = dir / "log.txt";
  SECTION("validation errors exit 1") {
    CHECK(run_cli("analyze --output-dir " + dir.string() + " --alpha 2", log) == 1);
    CHECK(read_text(log).rfind("error[validation]", 0) == 0);
    CHECK(run_cli("analyze --n-tapers nope", log) == 1);
    CHECK(run_cli("frobnicate", log) == 1);
    CHECK(run_cli("ingest --output-dir " + dir.string(), log) == 1);  // no inputs
  }
  SECTION("data errors exit 2") {
    CHECK(run_cli("ingest " + (dir / "missing.csv").string() + " --output-dir " + dir.string(), log) == 2);
    CHECK(read_text(log).rfind("error[data]", 0) == 0);
    write_text(dir / "bad.csv", "1,A,B\noops\n");
    CHECK(run_cli("ingest " + (dir / "bad.csv").string() + " --output-dir " + dir.string(), log) == 2);
    CHECK(read_text(log).find("line 2") != std::string::npos);
    CHECK(run_cli("ingest " + (dir / "bad.csv").string() + " --output-dir " + dir.string() +
                      " --malformed skip",
                  log) == 0);
    CHECK(run_cli("analyze --output-dir " + (dir / "nothing").string(), log) == 2);
  }
}
