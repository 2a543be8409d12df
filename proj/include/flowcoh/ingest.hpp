#pragma once

// Flow-record ingestion: parsing, triple selection, binning and centring.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace flowcoh {

using DeviceId = std::string;
using Timestamp = std::int64_t;  // seconds since epoch

struct FlowEvent {
  Timestamp timestamp = 0;
  DeviceId source;
  DeviceId destination;

  friend bool operator==(const FlowEvent&, const FlowEvent&) = default;
};

/// Directed edge; (A,B) and (B,A) are different keys.
struct EdgeKey {
  DeviceId src;
  DeviceId dst;

  friend auto operator<=>(const EdgeKey&, const EdgeKey&) = default;
};

/// Two directed edges A->B and B->C sharing the middle device.
struct Triple {
  DeviceId a;
  DeviceId b;
  DeviceId c;

  EdgeKey edge_ab() const { return {a, b}; }
  EdgeKey edge_bc() const { return {b, c}; }
  Triple reversed() const { return {c, b, a}; }

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

/// Half-open interval [start, end) in seconds.
struct TimeWindow {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

struct BinnedSeries {
  std::vector<std::uint32_t> counts;
  double delta = 1.0;
  double start_time = 0.0;
  std::optional<std::vector<double>> centred;

  std::size_t size() const { return counts.size(); }
};

struct GraphSummary {
  std::size_t n_triples = 0;
  std::size_t n_nodes = 0;
  std::size_t n_unique_edges = 0;
  double avg_length_hours = 0.0;
  double avg_rate_ab = 0.0;  // events per second
  double avg_rate_bc = 0.0;
};

// ---------------------------------------------------------------------------
// Parsing

/// Column layout of a delimited flow file. Columns are 0-based.
struct FlowFormat {
  char delimiter = ',';
  std::size_t time_column = 0;
  std::size_t source_column = 1;
  std::size_t destination_column = 2;
  bool has_header = false;
};

enum class MalformedPolicy { kFailFast, kSkip };

struct ParseResult {
  std::vector<FlowEvent> events;
  std::size_t skipped = 0;
  std::vector<std::size_t> skipped_lines;  // 1-based
};

/// Blank lines and lines starting with '#' are ignored. A malformed line
/// throws ParseError under kFailFast, or is counted under kSkip. Self-loops
/// (source == destination) and negative timestamps count as malformed.
ParseResult parse_flow_records(std::istream& in, const FlowFormat& format = {},
                               MalformedPolicy policy = MalformedPolicy::kFailFast);

/// Inverse of parse_flow_records for the default column layout.
void write_flow_records(std::ostream& out, std::span<const FlowEvent> events,
                        char delimiter = ',');

// ---------------------------------------------------------------------------
// Edge index and triple selection

/// Event times per directed edge, each list sorted ascending.
using EdgeIndex = std::map<EdgeKey, std::vector<Timestamp>>;

EdgeIndex index_edges(std::span<const FlowEvent> events);

struct RankedTriple {
  Triple triple;
  std::uint64_t count_ab = 0;
  std::uint64_t count_bc = 0;

  std::uint64_t busyness() const { return count_ab + count_bc; }
};

/// Top `n_triple` triples by busyness (events on A->B plus B->C), ties broken
/// by lexicographic (a, b, c). A triple is skipped when its reverse (C,B,A)
/// has already been taken, and round trips (a == c) are never candidates.
/// Returns fewer than requested (with a warning) when candidates run out.
std::vector<RankedTriple> select_top_triples(std::span<const FlowEvent> events,
                                             std::size_t n_triple);
std::vector<RankedTriple> select_top_triples(const EdgeIndex& index,
                                             std::size_t n_triple);

// ---------------------------------------------------------------------------
// Binning

/// counts[k] = #events in [t0 + k*delta, t0 + (k+1)*delta),
/// K = ceil((t1 - t0) / delta). Throws DataError naming the first timestamp
/// outside the window.
BinnedSeries bin_events(std::span<const double> timestamps, double delta,
                        TimeWindow window);
BinnedSeries bin_events(std::span<const Timestamp> timestamps, double delta,
                        TimeWindow window);

/// Number of bins bin_events produces for this window.
std::size_t bin_count(TimeWindow window, double delta);

/// Copy of `series` with centred[k] = counts[k] - mean(counts).
BinnedSeries centre_series(const BinnedSeries& series);

/// Shared observation window for a triple: [first event, last event + delta)
/// over the union of both edges.
TimeWindow triple_window(std::span<const Timestamp> ab,
                         std::span<const Timestamp> bc, double delta);

// ---------------------------------------------------------------------------
// Summary

/// A selected triple with its observation window; one manifest entry.
struct TripleRecord {
  std::size_t index = 0;  // rank, 0-based
  Triple triple;
  std::uint64_t count_ab = 0;
  std::uint64_t count_bc = 0;
  TimeWindow window;
  std::size_t n_bins = 0;

  std::uint64_t busyness() const { return count_ab + count_bc; }
};

std::vector<TripleRecord> describe_triples(const EdgeIndex& index,
                                           std::span<const RankedTriple> ranked,
                                           double delta);

GraphSummary summarize_graph(std::span<const TripleRecord> triples);

}  // namespace flowcoh
