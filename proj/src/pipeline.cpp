#include "flowcoh/pipeline.hpp"

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "flowcoh/error.hpp"
#include "flowcoh/inference.hpp"
#include "flowcoh/log.hpp"
#include "flowcoh/random.hpp"
#include "flowcoh/spectral.hpp"

namespace flowcoh {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Value parsing

std::string trim_copy(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  const std::string s = trim_copy(text);
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ValidationError("invalid value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  const std::string s = trim_copy(text);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ValidationError("invalid boolean '" + s + "' for " + std::string(key));
}

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto next = std::min(text.find(',', pos), text.size());
    if (auto item = trim_copy(text.substr(pos, next - pos)); !item.empty()) out.push_back(item);
    pos = next + 1;
  }
  return out;
}

using Setter = std::function<void(PipelineConfig&, std::string_view, std::string_view)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    const auto size_field = [](std::size_t PipelineConfig::*field) -> Setter {
      return [field](PipelineConfig& c, std::string_view k, std::string_view v) {
        c.*field = parse_number<std::size_t>(k, v);
      };
    };
    const auto double_field = [](double PipelineConfig::*field) -> Setter {
      return [field](PipelineConfig& c, std::string_view k, std::string_view v) {
        c.*field = parse_number<double>(k, v);
      };
    };
    const auto gen_double = [](double GeneratorSpec::*field) -> Setter {
      return [field](PipelineConfig& c, std::string_view k, std::string_view v) {
        c.generator.*field = parse_number<double>(k, v);
      };
    };
    t["input"] = [](PipelineConfig& c, std::string_view, std::string_view v) {
      c.inputs.clear();
      for (auto& p : split_list(v)) c.inputs.emplace_back(p);
    };
    t["output_dir"] = [](PipelineConfig& c, std::string_view, std::string_view v) {
      c.output_dir = trim_copy(v);
    };
    t["profiles"] = [](PipelineConfig& c, std::string_view, std::string_view v) {
      c.profiles = fs::path(trim_copy(v));
    };
    t["n_triple"] = size_field(&PipelineConfig::n_triple);
    t["delta"] = double_field(&PipelineConfig::delta);
    t["delimiter"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      const std::string s(v);  // not trimmed: the delimiter may be whitespace
      if (s == "tab" || s == "\\t") {
        c.format.delimiter = '\t';
      } else if (s.size() == 1) {
        c.format.delimiter = s[0];
      } else {
        throw ValidationError("invalid value '" + s + "' for " + std::string(k));
      }
    };
    t["time_column"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      c.format.time_column = parse_number<std::size_t>(k, v);
    };
    t["source_column"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      c.format.source_column = parse_number<std::size_t>(k, v);
    };
    t["destination_column"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      c.format.destination_column = parse_number<std::size_t>(k, v);
    };
    t["has_header"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      c.format.has_header = parse_bool(k, v);
    };
    t["malformed"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      const auto s = trim_copy(v);
      if (s == "fail_fast" || s == "fail") {
        c.malformed = MalformedPolicy::kFailFast;
      } else if (s == "skip") {
        c.malformed = MalformedPolicy::kSkip;
      } else {
        throw ValidationError("invalid value '" + s + "' for " + std::string(k) +
                              " (expected fail_fast or skip)");
      }
    };
    t["n_tapers"] = size_field(&PipelineConfig::n_tapers);
    t["time_bandwidth"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      c.time_bandwidth = parse_number<double>(k, v);
    };
    t["f_max"] = double_field(&PipelineConfig::f_max);
    t["n_freqs"] = size_field(&PipelineConfig::n_freqs);
    t["alpha"] = double_field(&PipelineConfig::alpha);
    t["taper_precision"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      const auto s = trim_copy(v);
      if (s == "double") {
        c.taper_precision = ConcentrationPrecision::kDouble;
      } else if (s == "extended") {
        c.taper_precision = ConcentrationPrecision::kExtended;
      } else {
        throw ValidationError("invalid value '" + s + "' for " + std::string(k) +
                              " (expected double or extended)");
      }
    };
    t["gmm_components"] = size_field(&PipelineConfig::gmm_components);
    t["gmm_lambda"] = double_field(&PipelineConfig::gmm_lambda);
    t["gmm_replicates"] = size_field(&PipelineConfig::gmm_replicates);
    t["gmm_covariance"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      const auto s = trim_copy(v);
      if (s == "full") {
        c.gmm_covariance = CovarianceType::kFull;
      } else if (s == "diagonal") {
        c.gmm_covariance = CovarianceType::kDiagonal;
      } else {
        throw ValidationError("invalid value '" + s + "' for " + std::string(k) +
                              " (expected full or diagonal)");
      }
    };
    t["write_full_covariances"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      c.write_full_covariances = parse_bool(k, v);
    };
    t["synth_kind"] = [](PipelineConfig& c, std::string_view, std::string_view v) {
      c.generator.kind = parse_generator_kind(trim_copy(v));
    };
    t["synth_rate"] = gen_double(&GeneratorSpec::rate);
    t["synth_duration"] = gen_double(&GeneratorSpec::duration);
    t["synth_mod_freq"] = gen_double(&GeneratorSpec::mod_freq);
    t["synth_mod_depth"] = gen_double(&GeneratorSpec::mod_depth);
    t["synth_hawkes_alpha"] = gen_double(&GeneratorSpec::hawkes_alpha);
    t["synth_hawkes_beta"] = gen_double(&GeneratorSpec::hawkes_beta);
    t["synth_coupling"] = gen_double(&GeneratorSpec::coupling);
    t["synth_background_rate"] = gen_double(&GeneratorSpec::background_rate);
    t["synth_pairs"] = size_field(&PipelineConfig::synth_pairs);
    t["seed"] = [](PipelineConfig& c, std::string_view k, std::string_view v) {
      c.seed = parse_number<std::uint64_t>(k, v);
    };
    t["workers"] = size_field(&PipelineConfig::workers);
    return t;
  }();
  return table;
}

// ---------------------------------------------------------------------------
// Files

std::string generated_at() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

std::ofstream open_output(const fs::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  if (ec) throw DataError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw DataError("error writing " + path.string());
}

void write_json(const fs::path& path, const Json& doc) {
  auto out = open_output(path);
  out << doc.dump(2) << '\n';
  finish(out, path);
}

Json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(',', pos);
    out.push_back(trim_copy(std::string_view(line).substr(pos, next - pos)));
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  return out;
}

Csv read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Csv csv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_copy(line).empty()) continue;
    auto fields = split_csv_line(line);
    if (csv.header.empty()) {
      csv.header = std::move(fields);
      continue;
    }
    if (fields.size() != csv.header.size()) {
      throw DataError(path.string() + ": line " + std::to_string(line_no) + ": expected " +
                      std::to_string(csv.header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    csv.rows.push_back(std::move(fields));
  }
  if (csv.header.empty()) throw DataError(path.string() + ": empty file");
  return csv;
}

template <typename T>
T csv_number(const fs::path& path, const std::string& field) {
  T value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
    throw DataError(path.string() + ": invalid number '" + field + "'");
  }
  return value;
}

std::string triple_file(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "triple_%04zu.csv", index);
  return buf;
}

std::vector<FlowEvent> read_inputs(const PipelineConfig& config, std::size_t& skipped) {
  std::vector<FlowEvent> events;
  for (const auto& path : config.inputs) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open input " + path.string());
    ParseResult parsed;
    try {
      parsed = parse_flow_records(in, config.format, config.malformed);
    } catch (const ParseError& e) {
      throw DataError(path.string() + ": " + e.what());
    }
    if (parsed.skipped > 0) {
      warn(path.string() + ": skipped " + std::to_string(parsed.skipped) + " malformed line(s)");
    }
    skipped += parsed.skipped;
    events.insert(events.end(), std::make_move_iterator(parsed.events.begin()),
                  std::make_move_iterator(parsed.events.end()));
  }
  return events;
}

Json graph_summary_json(const GraphSummary& s) {
  Json j;
  j["n_triples"] = s.n_triples;
  j["n_nodes"] = s.n_nodes;
  j["n_unique_edges"] = s.n_unique_edges;
  j["avg_length_hours"] = s.avg_length_hours;
  j["avg_rate_ab"] = s.avg_rate_ab;
  j["avg_rate_bc"] = s.avg_rate_bc;
  return j;
}

struct ManifestEntry {
  TripleRecord record;
  fs::path series;
};

struct Manifest {
  double delta = 1.0;
  std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  const Json doc = read_json(path);
  Manifest m;
  try {
    m.delta = doc.at("delta").get<double>();
    for (const auto& t : doc.at("triples")) {
      ManifestEntry e;
      auto& r = e.record;
      r.index = t.at("index").get<std::size_t>();
      r.triple = {t.at("a").get<std::string>(), t.at("b").get<std::string>(),
                  t.at("c").get<std::string>()};
      r.count_ab = t.at("count_ab").get<std::uint64_t>();
      r.count_bc = t.at("count_bc").get<std::uint64_t>();
      r.window = {t.at("window").at(0).get<double>(), t.at("window").at(1).get<double>()};
      r.n_bins = t.at("K").get<std::size_t>();
      e.series = dir / t.at("series").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return m;
}

void write_series(const fs::path& path, const BinnedSeries& ab, const BinnedSeries& bc) {
  auto out = open_output(path);
  out << "k,count_ab,count_bc\n";
  for (std::size_t k = 0; k < ab.size(); ++k) {
    out << k << ',' << ab.counts[k] << ',' << bc.counts[k] << '\n';
  }
  finish(out, path);
}

std::pair<std::vector<double>, std::vector<double>> read_series(const fs::path& path,
                                                                std::size_t expected) {
  const Csv csv = read_csv(path);
  if (csv.header != std::vector<std::string>{"k", "count_ab", "count_bc"}) {
    throw DataError(path.string() + ": unexpected header");
  }
  if (csv.rows.size() != expected) {
    throw DataError(path.string() + ": " + std::to_string(csv.rows.size()) +
                    " bins, manifest says " + std::to_string(expected));
  }
  BinnedSeries ab, bc;
  for (const auto& row : csv.rows) {
    ab.counts.push_back(csv_number<std::uint32_t>(path, row[1]));
    bc.counts.push_back(csv_number<std::uint32_t>(path, row[2]));
  }
  return {*centre_series(ab).centred, *centre_series(bc).centred};
}

struct TripleAnalysis {
  bool analyzed = false;
  std::string skip_reason;
  std::vector<double> profile;
  std::size_t n_significant = 0;
  double mean_coherence = 0.0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

double PipelineConfig::effective_time_bandwidth() const {
  return time_bandwidth.value_or(default_time_bandwidth(n_tapers));
}

void validate(const PipelineConfig& c) {
  const auto fail = [](const std::string& m) { throw ValidationError(m); };
  if (c.n_triple < 1) fail("n_triple must be >= 1");
  if (!(c.delta > 0.0) || !std::isfinite(c.delta)) fail("delta must be > 0");
  if (c.n_tapers < 2) fail("n_tapers must be >= 2");
  if (!(c.effective_time_bandwidth() > 0.0)) fail("time_bandwidth must be > 0");
  if (c.n_freqs < 1) fail("n_freqs must be >= 1");
  if (!(c.f_max > 0.0) || c.f_max > 0.5 / c.delta) {
    fail("f_max must lie in (0, 1/(2 delta)] = (0, " + format_double(0.5 / c.delta) + "]");
  }
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) fail("alpha must lie in (0, 1)");
  if (c.gmm_components < 1) fail("gmm_components must be >= 1");
  if (!(c.gmm_lambda >= 0.0)) fail("gmm_lambda must be >= 0");
  if (c.gmm_replicates < 1) fail("gmm_replicates must be >= 1");
  if (c.workers < 1) fail("workers must be >= 1");
  if (c.synth_pairs < 1) fail("synth_pairs must be >= 1");
  if (c.format.time_column == c.format.source_column ||
      c.format.time_column == c.format.destination_column ||
      c.format.source_column == c.format.destination_column) {
    fail("time, source and destination columns must differ");
  }
  validate(c.generator);
}

void apply_setting(PipelineConfig& config, std::string_view key, std::string_view value) {
  std::string k(key);
  std::replace(k.begin(), k.end(), '-', '_');
  const auto& table = setters();
  const auto it = table.find(k);
  if (it == table.end()) throw ValidationError("unknown setting '" + std::string(key) + "'");
  it->second(config, k, value);
}

const std::vector<std::string>& setting_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [k, _] : setters()) out.push_back(k);
    return out;
  }();
  return keys;
}

void load_config_file(PipelineConfig& config, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto content = trim_copy(line);
    if (content.empty() || content[0] == '#' || content[0] == ';' || content[0] == '[') continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_no) +
                            ": expected key = value");
    }
    const auto key = trim_copy(std::string_view(content).substr(0, eq));
    std::string value = std::string(content.substr(eq + 1));
    if (key != "delimiter") value = trim_copy(value);
    try {
      apply_setting(config, key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------------------
// Commands

IngestSummary cmd_ingest(const PipelineConfig& config) {
  validate(config);
  if (config.inputs.empty()) throw ValidationError("ingest: no input files given");
  IngestSummary summary;
  const auto events = read_inputs(config, summary.n_skipped_lines);
  summary.n_events = events.size();

  Json manifest;
  manifest["generated_at"] = generated_at();
  manifest["delta"] = config.delta;
  manifest["n_triple_requested"] = config.n_triple;
  manifest["n_events"] = events.size();
  manifest["n_skipped_lines"] = summary.n_skipped_lines;
  manifest["triples"] = Json::array();

  if (events.empty()) {
    warn("ingest: no flow records in input; writing an empty manifest");
    write_json(config.output_dir / "manifest.json", manifest);
    write_json(config.output_dir / "graph_summary.json", graph_summary_json({}));
    return summary;
  }

  const EdgeIndex index = index_edges(events);
  const auto ranked = select_top_triples(index, config.n_triple);
  const auto records = describe_triples(index, ranked, config.delta);
  summary.n_triples = records.size();

  parallel_for(records.size(), config.workers, [&](std::size_t i) {
    const auto& r = records[i];
    const auto& ab = index.at(r.triple.edge_ab());
    const auto& bc = index.at(r.triple.edge_bc());
    write_series(config.output_dir / "series" / triple_file(i),
                 bin_events(std::span<const Timestamp>(ab), config.delta, r.window),
                 bin_events(std::span<const Timestamp>(bc), config.delta, r.window));
  });

  for (const auto& r : records) {
    Json t;
    t["index"] = r.index;
    t["a"] = r.triple.a;
    t["b"] = r.triple.b;
    t["c"] = r.triple.c;
    t["busyness"] = r.busyness();
    t["count_ab"] = r.count_ab;
    t["count_bc"] = r.count_bc;
    t["window"] = {r.window.start, r.window.end};
    t["K"] = r.n_bins;
    t["series"] = (fs::path("series") / triple_file(r.index)).generic_string();
    manifest["triples"].push_back(std::move(t));
  }
  write_json(config.output_dir / "manifest.json", manifest);
  write_json(config.output_dir / "graph_summary.json",
             graph_summary_json(records.empty() ? GraphSummary{} : summarize_graph(records)));
  return summary;
}

AnalyzeSummary cmd_analyze(const PipelineConfig& config) {
  validate(config);
  const Manifest manifest = read_manifest(config.output_dir);
  const FrequencyGrid grid = frequency_grid(config.f_max, config.n_freqs, manifest.delta);
  const double nw = config.effective_time_bandwidth();
  const std::size_t n_tapers = config.n_tapers;
  if (static_cast<double>(n_tapers) > 2.0 * nw - 1.0) {
    warn("analyze: n_tapers=" + std::to_string(n_tapers) + " exceeds 2*NW-1 for NW=" +
         format_double(nw));
  }
  TaperCache tapers(DpssOptions{config.taper_precision, false});
  std::vector<TripleAnalysis> results(manifest.entries.size());

  parallel_for(manifest.entries.size(), config.workers, [&](std::size_t i) {
    const auto& entry = manifest.entries[i];
    const std::size_t k = entry.record.n_bins;
    auto& res = results[i];
    if (!(nw < static_cast<double>(k) / 2.0) || n_tapers > k) {
      res.skip_reason = "K=" + std::to_string(k) + " too short for NW=" + format_double(nw) +
                        ", L=" + std::to_string(n_tapers);
      return;
    }
    const auto [x1, x2] = read_series(entry.series, k);
    const auto set = tapers.get(k, nw, n_tapers);
    const auto spec = multitaper_spectral_matrix(x1, x2, *set, grid, manifest.delta);
    const auto coh = coherence(spec);
    const auto thr = threshold_profile(coh, n_tapers, config.alpha);

    const auto file = triple_file(entry.record.index);
    {
      const fs::path path = config.output_dir / "spectra" / file;
      auto out = open_output(path);
      out << "f_hz,S11,S22,re_S12,im_S12,coherence\n";
      for (std::size_t q = 0; q < grid.n_freqs; ++q) {
        out << format_double(grid.freqs_hz[q]) << ',' << format_double(spec.s11[q]) << ','
            << format_double(spec.s22[q]) << ',' << format_double(spec.s12[q].real()) << ','
            << format_double(spec.s12[q].imag()) << ','
            << (coh.values[q] ? format_double(*coh.values[q]) : "") << '\n';
      }
      finish(out, path);
    }
    {
      const fs::path path = config.output_dir / "coherence" / file;
      auto out = open_output(path);
      out << "f_hz,coherence,lower,upper,significant,thresholded\n";
      for (std::size_t q = 0; q < grid.n_freqs; ++q) {
        const auto& ci = thr.intervals[q];
        out << format_double(grid.freqs_hz[q]) << ','
            << (thr.defined[q] ? format_double(thr.estimates[q]) : "") << ','
            << format_double(ci.lower) << ',' << format_double(ci.upper) << ','
            << (ci.significant ? 1 : 0) << ',' << format_double(thr.values[q]) << '\n';
      }
      finish(out, path);
    }
    res.analyzed = true;
    res.profile = thr.values;
    res.n_significant = thr.n_significant();
    double total = 0.0;
    for (double v : thr.estimates) total += v;
    res.mean_coherence = total / static_cast<double>(grid.n_freqs);
  });

  AnalyzeSummary summary;
  Json doc;
  doc["generated_at"] = generated_at();
  doc["n_tapers"] = n_tapers;
  doc["time_bandwidth"] = nw;
  doc["alpha"] = config.alpha;
  doc["f_max"] = config.f_max;
  doc["n_freqs"] = config.n_freqs;
  doc["delta"] = manifest.delta;
  doc["triples"] = Json::array();

  const fs::path profiles_path = config.output_dir / "profiles.csv";
  auto profiles = open_output(profiles_path);
  profiles << "triple";
  for (double f : grid.freqs_hz) profiles << ',' << format_double(f);
  profiles << '\n';
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& res = results[i];
    const auto& rec = manifest.entries[i].record;
    Json t;
    t["index"] = rec.index;
    t["K"] = rec.n_bins;
    if (!res.analyzed) {
      warn("analyze: skipping triple " + std::to_string(rec.index) + ": " + res.skip_reason);
      t["skipped"] = res.skip_reason;
      ++summary.n_skipped;
    } else {
      t["n_significant"] = res.n_significant;
      t["mean_coherence"] = res.mean_coherence;
      t["spectrum"] = (fs::path("spectra") / triple_file(rec.index)).generic_string();
      t["coherence"] = (fs::path("coherence") / triple_file(rec.index)).generic_string();
      ++summary.n_analyzed;
      profiles << rec.index;
      for (double v : res.profile) profiles << ',' << format_double(v);
      profiles << '\n';
    }
    doc["triples"].push_back(std::move(t));
  }
  finish(profiles, profiles_path);
  write_json(config.output_dir / "analysis.json", doc);
  return summary;
}

ClusterSummaryCounts cmd_cluster(const PipelineConfig& config) {
  validate(config);
  const fs::path path = config.profiles.value_or(config.output_dir / "profiles.csv");
  const Csv csv = read_csv(path);
  if (csv.header.size() < 2 || csv.header[0] != "triple") {
    throw DataError(path.string() + ": expected header 'triple,<f_1>,...'");
  }
  const std::size_t dim = csv.header.size() - 1;
  if (csv.rows.empty()) throw ValidationError("cluster: no profiles in " + path.string());
  if (csv.rows.size() < config.gmm_components) {
    throw ValidationError("cluster: gmm_components (" + std::to_string(config.gmm_components) +
                          ") exceeds the number of profiles (" +
                          std::to_string(csv.rows.size()) + ")");
  }
  std::vector<double> freqs(dim);
  for (std::size_t j = 0; j < dim; ++j) freqs[j] = csv_number<double>(path, csv.header[j + 1]);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(csv.rows.size()), static_cast<Eigen::Index>(dim));
  std::vector<std::size_t> triple_ids(csv.rows.size());
  for (std::size_t i = 0; i < csv.rows.size(); ++i) {
    triple_ids[i] = csv_number<std::size_t>(path, csv.rows[i][0]);
    for (std::size_t j = 0; j < dim; ++j) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          csv_number<double>(path, csv.rows[i][j + 1]);
    }
  }

  GmmOptions opt;
  opt.n_components = config.gmm_components;
  opt.reg_lambda = config.gmm_lambda;
  opt.n_replicates = config.gmm_replicates;
  opt.seed = derive_seed(config.seed, "cluster");
  opt.covariance = config.gmm_covariance;
  opt.n_threads = config.workers;
  const GmmFit fit = fit_gmm(x, opt);
  const GmmModel& model = fit.model;

  auto assignments = assign_all(model, x);
  for (std::size_t i = 0; i < assignments.size(); ++i) assignments[i].triple_index = triple_ids[i];

  // Triple names, when the manifest is available, indexed by triple id.
  std::vector<Triple> triples;
  if (fs::exists(config.output_dir / "manifest.json")) {
    const Manifest manifest = read_manifest(config.output_dir);
    for (const auto& e : manifest.entries) {
      if (e.record.index >= triples.size()) triples.resize(e.record.index + 1);
      triples[e.record.index] = e.record.triple;
    }
    for (auto id : triple_ids) {
      if (id >= triples.size()) {
        warn("cluster: profile triple " + std::to_string(id) +
             " is not in the manifest; member edges omitted");
        triples.clear();
        break;
      }
    }
  }
  const auto report = cluster_report(model, assignments, triples);

  Json doc;
  doc["generated_at"] = generated_at();
  doc["n_components"] = model.n_components;
  doc["dimension"] = model.dimension;
  doc["covariance_type"] = model.covariance == CovarianceType::kFull ? "full" : "diagonal";
  doc["reg_lambda"] = model.reg_lambda;
  doc["log_likelihood"] = model.log_likelihood;
  doc["objective"] = model.objective;
  doc["n_replicates"] = fit.replicates.size();
  doc["best_replicate"] = fit.best_replicate;
  std::size_t n_failed = 0;
  for (const auto& r : fit.replicates) n_failed += r.failed ? 1 : 0;
  doc["n_failed_replicates"] = n_failed;
  doc["f_hz"] = freqs;
  doc["components"] = Json::array();
  for (std::size_t k = 0; k < model.n_components; ++k) {
    Json c;
    c["label"] = k + 1;
    c["weight"] = model.weights[static_cast<Eigen::Index>(k)];
    c["mean"] = std::vector<double>(model.means[k].data(), model.means[k].data() + dim);
    const Eigen::VectorXd diag = model.covariances[k].diagonal();
    c["covariance_diagonal"] = std::vector<double>(diag.data(), diag.data() + dim);
    if (config.write_full_covariances) {
      Json rows = Json::array();
      for (std::size_t r = 0; r < dim; ++r) {
        const Eigen::VectorXd row = model.covariances[k].row(static_cast<Eigen::Index>(r));
        rows.push_back(std::vector<double>(row.data(), row.data() + dim));
      }
      c["covariance"] = std::move(rows);
    }
    doc["components"].push_back(std::move(c));
  }
  write_json(config.output_dir / "model.json", doc);

  {
    const fs::path p = config.output_dir / "assignments.csv";
    auto out = open_output(p);
    out << "triple,label,max_posterior\n";
    for (const auto& a : assignments) {
      out << a.triple_index << ',' << a.label << ',' << format_double(a.max_posterior()) << '\n';
    }
    finish(out, p);
  }
  {
    const fs::path p = config.output_dir / "cluster_means.csv";
    auto out = open_output(p);
    out << "f_hz";
    for (const auto& s : report) out << ",mean_" << s.label << ",std_" << s.label;
    out << '\n';
    for (std::size_t j = 0; j < dim; ++j) {
      out << format_double(freqs[j]);
      for (const auto& s : report) {
        out << ',' << format_double(s.mean[static_cast<Eigen::Index>(j)]) << ','
            << format_double(s.std_dev[static_cast<Eigen::Index>(j)]);
      }
      out << '\n';
    }
    finish(out, p);
  }

  ClusterSummaryCounts counts;
  counts.n_profiles = assignments.size();
  Json rep;
  rep["generated_at"] = generated_at();
  rep["clusters"] = Json::array();
  for (const auto& s : report) {
    Json c;
    c["label"] = s.label;
    c["weight"] = s.weight;
    c["n_members"] = s.members.size();
    c["members"] = s.members;
    Json edges = Json::array();
    for (const auto& e : s.edges) edges.push_back({e.src, e.dst});
    c["edges"] = std::move(edges);
    rep["clusters"].push_back(std::move(c));
    counts.cluster_sizes.push_back(s.members.size());
  }
  write_json(config.output_dir / "cluster_report.json", rep);
  return counts;
}

std::size_t cmd_synth(const PipelineConfig& config) {
  validate(config);
  std::vector<std::vector<FlowEvent>> flows(config.synth_pairs);
  parallel_for(config.synth_pairs, config.workers, [&](std::size_t i) {
    GeneratorSpec spec = config.generator;
    spec.seed = derive_seed(config.seed, "synth", i);
    flows[i] = pair_to_flows(generate_pair(spec), synthetic_triple(i));
  });
  const fs::path path = config.output_dir / "flows.csv";
  auto out = open_output(path);
  std::size_t n = 0;
  for (const auto& f : flows) {
    write_flow_records(out, f, config.format.delimiter);
    n += f.size();
  }
  finish(out, path);
  return n;
}

std::size_t cmd_report(const PipelineConfig& config) {
  validate(config);
  const Json analysis = read_json(config.output_dir / "analysis.json");
  const fs::path path = config.output_dir / "report.csv";
  auto out = open_output(path);
  out << "triple,f_hz,series,value\n";
  std::size_t n_rows = 0;
  const auto emit = [&](const std::string& triple, const fs::path& file,
                        const std::vector<std::string>& skip) {
    const Csv csv = read_csv(file);
    if (csv.header.empty() || csv.header[0] != "f_hz") {
      throw DataError(file.string() + ": expected f_hz as the first column");
    }
    for (const auto& row : csv.rows) {
      for (std::size_t j = 1; j < csv.header.size(); ++j) {
        if (std::find(skip.begin(), skip.end(), csv.header[j]) != skip.end()) continue;
        out << triple << ',' << row[0] << ',' << csv.header[j] << ',' << row[j] << '\n';
        ++n_rows;
      }
    }
  };
  try {
    for (const auto& t : analysis.at("triples")) {
      if (!t.contains("spectrum")) continue;
      const std::string id = std::to_string(t.at("index").get<std::size_t>());
      emit(id, config.output_dir / t.at("spectrum").get<std::string>(), {});
      emit(id, config.output_dir / t.at("coherence").get<std::string>(), {"coherence"});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("analysis.json: " + std::string(e.what()));
  }
  if (const auto means = config.output_dir / "cluster_means.csv"; fs::exists(means)) {
    const Csv csv = read_csv(means);
    for (const auto& row : csv.rows) {
      for (std::size_t j = 1; j < csv.header.size(); ++j) {
        const auto& name = csv.header[j];  // mean_<c> or std_<c>
        const auto underscore = name.find('_');
        out << "cluster_" << name.substr(underscore + 1) << ',' << row[0] << ','
            << name.substr(0, underscore) << ',' << row[j] << '\n';
        ++n_rows;
      }
    }
  }
  finish(out, path);
  return n_rows;
}

}  // namespace flowcoh
