// flowcoh: coherence analysis of flow-record event streams.
//
//   flowcoh synth   --output-dir out --synth-kind modulated_poisson --synth-pairs 10
//   flowcoh ingest  out/flows.csv --output-dir out --n-triple 10
//   flowcoh analyze --output-dir out
//   flowcoh cluster --output-dir out --gmm-replicates 20
//   flowcoh report  --output-dir out
//
// Settings come from built-in defaults, then --config FILE (key = value), then
// flags. Exit status: 0 success, 1 validation error, 2 data error.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>

#include "flowcoh/error.hpp"
#include "flowcoh/pipeline.hpp"

namespace {

using flowcoh::PipelineConfig;

const std::map<std::string, std::string>& help_text() {
  static const std::map<std::string, std::string> text = {
      {"input", "comma-separated flow files (ingest)"},
      {"output_dir", "directory for all artifacts"},
      {"profiles", "profile CSV for cluster (default <output-dir>/profiles.csv)"},
      {"n_triple", "number of busiest triples to keep (default 500)"},
      {"delta", "bin width in seconds (default 1)"},
      {"delimiter", "field delimiter of flow files; 'tab' for tab (default ,)"},
      {"time_column", "0-based column of the timestamp (default 0)"},
      {"source_column", "0-based column of the source device (default 1)"},
      {"destination_column", "0-based column of the destination device (default 2)"},
      {"has_header", "first non-comment line of each flow file is a header"},
      {"malformed", "fail_fast or skip (default fail_fast)"},
      {"n_tapers", "number of Slepian tapers L (default 40)"},
      {"time_bandwidth", "time-bandwidth product NW (default (L+1)/2)"},
      {"f_max", "highest grid frequency in Hz (default 0.05)"},
      {"n_freqs", "number of grid frequencies (default 500)"},
      {"alpha", "confidence level of the intervals is 1-alpha (default 0.05)"},
      {"taper_precision", "double or extended concentration evaluation (default double)"},
      {"gmm_components", "number of mixture components C (default 4)"},
      {"gmm_lambda", "covariance regularisation (default 0.001)"},
      {"gmm_replicates", "EM restarts (default 1000)"},
      {"gmm_covariance", "full or diagonal (default full)"},
      {"write_full_covariances", "store full covariance matrices in model.json"},
      {"synth_kind", "poisson, modulated_poisson, hawkes or coupled_thinning"},
      {"synth_rate", "events per second (Hawkes baseline)"},
      {"synth_duration", "stream length in seconds"},
      {"synth_mod_freq", "modulation frequency in Hz"},
      {"synth_mod_depth", "modulation depth in [0,1)"},
      {"synth_hawkes_alpha", "Hawkes excitation jump"},
      {"synth_hawkes_beta", "Hawkes decay rate"},
      {"synth_coupling", "probability a parent event reaches stream 2"},
      {"synth_background_rate", "independent background rate per stream"},
      {"synth_pairs", "number of synthetic triples"},
      {"seed", "master random seed"},
      {"workers", "worker threads (default 1)"},
  };
  return text;
}

std::string flag_name(std::string key) {
  for (auto& ch : key) {
    if (ch == '_') ch = '-';
  }
  return "--" + key;
}

struct Subcommand {
  CLI::App* app = nullptr;
  std::map<std::string, CLI::Option*> options;
  std::map<std::string, std::string> values;
  std::vector<std::string> positional_inputs;
};

int report_error(const char* kind, const std::string& what, int code) {
  std::cerr << "error[" << kind << "]: " << what << '\n';
  return code;
}

int run(const std::string& name, Subcommand& sub, const std::string& config_path) {
  PipelineConfig config;
  if (!config_path.empty()) flowcoh::load_config_file(config, config_path);
  for (const auto& [key, option] : sub.options) {
    if (option->count() > 0) flowcoh::apply_setting(config, key, sub.values[key]);
  }
  if (!sub.positional_inputs.empty()) {
    config.inputs.assign(sub.positional_inputs.begin(), sub.positional_inputs.end());
  }
  flowcoh::validate(config);

  if (name == "synth") {
    const auto n = flowcoh::cmd_synth(config);
    std::cout << "synth: wrote " << n << " flow records to "
              << (config.output_dir / "flows.csv").string() << '\n';
  } else if (name == "ingest") {
    const auto s = flowcoh::cmd_ingest(config);
    std::cout << "ingest: " << s.n_events << " events, " << s.n_skipped_lines
              << " skipped lines, " << s.n_triples << " triples\n";
  } else if (name == "analyze") {
    const auto s = flowcoh::cmd_analyze(config);
    std::cout << "analyze: " << s.n_analyzed << " triples analysed, " << s.n_skipped
              << " skipped\n";
  } else if (name == "cluster") {
    const auto s = flowcoh::cmd_cluster(config);
    std::cout << "cluster: " << s.n_profiles << " profiles; sizes";
    for (auto n : s.cluster_sizes) std::cout << ' ' << n;
    std::cout << '\n';
  } else if (name == "report") {
    const auto n = flowcoh::cmd_report(config);
    std::cout << "report: " << n << " rows\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multitaper coherence analysis of flow-record event streams"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key = value configuration file")
      ->check(CLI::ExistingFile);

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate synthetic flow records"},
      {"ingest", "select triples, bin and store per-edge series"},
      {"analyze", "multitaper spectra, coherence and confidence intervals"},
      {"cluster", "Gaussian mixture clustering of thresholded profiles"},
      {"report", "long-format CSV of all per-triple results"},
  };
  std::map<std::string, Subcommand> subs;
  for (const auto& [name, description] : commands) {
    Subcommand& sub = subs[name];
    sub.app = app.add_subcommand(name, description);
    sub.app->fallthrough();
    for (const auto& key : flowcoh::setting_keys()) {
      const auto it = help_text().find(key);
      sub.options[key] = sub.app->add_option(flag_name(key), sub.values[key],
                                             it == help_text().end() ? "" : it->second);
    }
    if (name == "ingest") {
      sub.app->add_option("inputs", sub.positional_inputs, "flow files");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("validation", e.what(), 1);
  }

  for (auto& [name, sub] : subs) {
    if (!sub.app->parsed()) continue;
    try {
      return run(name, sub, config_path);
    } catch (const flowcoh::ValidationError& e) {
      return report_error("validation", e.what(), 1);
    } catch (const flowcoh::DataError& e) {
      return report_error("data", e.what(), 2);
    } catch (const flowcoh::NumericalError& e) {
      return report_error("numerical", e.what(), 2);
    } catch (const std::exception& e) {
      return report_error("internal", e.what(), 2);
    }
  }
  return 0;
}
