#pragma once

// End-to-end commands behind the CLI. All commands share one output directory:
//
//   flows.csv                      synth
//   manifest.json                  ingest  (selected triples, windows, K)
//   graph_summary.json             ingest
//   series/triple_NNNN.csv         ingest  (k, count_ab, count_bc)
//   spectra/triple_NNNN.csv        analyze (f_hz, S11, S22, re_S12, im_S12, coherence)
//   coherence/triple_NNNN.csv      analyze (f_hz, coherence, lower, upper, significant, thresholded)
//   profiles.csv                   analyze (one thresholded profile per row)
//   analysis.json                  analyze
//   model.json                     cluster
//   assignments.csv                cluster (triple, label, max_posterior)
//   cluster_means.csv              cluster (f_hz, mean_c, std_c for each c)
//   cluster_report.json            cluster
//   report.csv                     report  (triple, f_hz, series, value)
//
// JSON files carry a single wall-clock field, "generated_at"; everything else
// is a function of the inputs and the configuration.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flowcoh/clustering.hpp"
#include "flowcoh/ingest.hpp"
#include "flowcoh/synth.hpp"
#include "flowcoh/tapers.hpp"

namespace flowcoh {

struct PipelineConfig {
  std::vector<std::filesystem::path> inputs;
  std::filesystem::path output_dir = "flowcoh_out";
  std::optional<std::filesystem::path> profiles;  // cluster input; default <output_dir>/profiles.csv

  // ingest
  std::size_t n_triple = 500;
  double delta = 1.0;
  FlowFormat format;
  MalformedPolicy malformed = MalformedPolicy::kFailFast;

  // analyze
  std::size_t n_tapers = 40;
  std::optional<double> time_bandwidth;  // default (L + 1) / 2
  double f_max = 0.05;
  std::size_t n_freqs = 500;
  double alpha = 0.05;
  ConcentrationPrecision taper_precision = ConcentrationPrecision::kDouble;

  // cluster
  std::size_t gmm_components = 4;
  double gmm_lambda = 1e-3;
  std::size_t gmm_replicates = 1000;
  CovarianceType gmm_covariance = CovarianceType::kFull;
  bool write_full_covariances = false;

  // synth
  GeneratorSpec generator;
  std::size_t synth_pairs = 1;

  std::uint64_t seed = 0;
  std::size_t workers = 1;

  double effective_time_bandwidth() const;
};

/// Throws ValidationError naming the first invalid field.
void validate(const PipelineConfig& config);

/// Sets one field from its key=value spelling (the config-file keys, which are
/// also the long CLI flags with '-' for '_'). Throws ValidationError for an
/// unknown key or an unparsable value.
void apply_setting(PipelineConfig& config, std::string_view key, std::string_view value);

/// Every key accepted by apply_setting.
const std::vector<std::string>& setting_keys();

/// Reads "key = value" lines; blank lines and '#' or ';' comments are skipped,
/// and "[section]" headers are ignored.
void load_config_file(PipelineConfig& config, const std::filesystem::path& path);

struct IngestSummary {
  std::size_t n_events = 0;
  std::size_t n_skipped_lines = 0;
  std::size_t n_triples = 0;
};

struct AnalyzeSummary {
  std::size_t n_analyzed = 0;
  std::size_t n_skipped = 0;
};

struct ClusterSummaryCounts {
  std::size_t n_profiles = 0;
  std::vector<std::size_t> cluster_sizes;
};

IngestSummary cmd_ingest(const PipelineConfig& config);
AnalyzeSummary cmd_analyze(const PipelineConfig& config);
ClusterSummaryCounts cmd_cluster(const PipelineConfig& config);
/// Writes <output_dir>/flows.csv with synth_pairs synthetic triples; pair i
/// uses the generator with seed derive_seed(seed, "synth", i).
std::size_t cmd_synth(const PipelineConfig& config);
/// Writes <output_dir>/report.csv; returns the number of data rows.
std::size_t cmd_report(const PipelineConfig& config);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. If any call throws,
/// the exception from the lowest index is rethrown after all threads finish.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn);

}  // namespace flowcoh

#include "flowcoh/detail/parallel.hpp"
