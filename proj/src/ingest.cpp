#include "flowcoh/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <queue>
#include <limits>
#include <set>
#include <sstream>
#include <string_view>

#include "flowcoh/error.hpp"
#include "flowcoh/log.hpp"

namespace flowcoh {
namespace {

std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n";
  const auto first = s.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(ws);
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> fields;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find(delim, pos);
    if (next == std::string_view::npos) {
      fields.push_back(trim(line.substr(pos)));
      break;
    }
    fields.push_back(trim(line.substr(pos, next - pos)));
    pos = next + 1;
  }
  return fields;
}

// Returns an error message, or nothing on success.
std::optional<std::string> parse_line(std::string_view line, const FlowFormat& fmt,
                                      FlowEvent& out) {
  const auto fields = split(line, fmt.delimiter);
  const std::size_t needed =
      std::max({fmt.time_column, fmt.source_column, fmt.destination_column}) + 1;
  if (fields.size() < needed) {
    return "expected at least " + std::to_string(needed) + " fields, got " +
           std::to_string(fields.size());
  }
  const auto time_field = fields[fmt.time_column];
  Timestamp t = 0;
  const auto [ptr, ec] =
      std::from_chars(time_field.data(), time_field.data() + time_field.size(), t);
  if (ec != std::errc{} || ptr != time_field.data() + time_field.size()) {
    return "invalid timestamp '" + std::string(time_field) + "'";
  }
  if (t < 0) return "negative timestamp " + std::to_string(t);
  const auto src = fields[fmt.source_column];
  const auto dst = fields[fmt.destination_column];
  if (src.empty() || dst.empty()) return "empty device identifier";
  if (src == dst) return "self-loop on device '" + std::string(src) + "'";
  out.timestamp = t;
  out.source.assign(src);
  out.destination.assign(dst);
  return std::nullopt;
}

struct NodeEdges {
  DeviceId node;
  // (count, peer) sorted by count descending, then peer ascending.
  std::vector<std::pair<std::uint64_t, DeviceId>> in;
  std::vector<std::pair<std::uint64_t, DeviceId>> out;
};

struct Frontier {
  std::uint64_t busyness;
  const NodeEdges* node;
  std::size_t i;  // index into node->in
  std::size_t j;  // index into node->out

  const DeviceId& a() const { return node->in[i].second; }
  const DeviceId& c() const { return node->out[j].second; }
};

// Heap order: larger busyness first, then lexicographically smaller (a, b, c).
struct FrontierAfter {
  bool operator()(const Frontier& x, const Frontier& y) const {
    if (x.busyness != y.busyness) return x.busyness < y.busyness;
    if (x.a() != y.a()) return x.a() > y.a();
    if (x.node->node != y.node->node) return x.node->node > y.node->node;
    return x.c() > y.c();
  }
};

}  // namespace

ParseResult parse_flow_records(std::istream& in, const FlowFormat& format,
                               MalformedPolicy policy) {
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  bool header_pending = format.has_header;
  FlowEvent event;
  while (std::getline(in, line)) {
    ++line_no;
    const auto content = trim(line);
    if (content.empty() || content.front() == '#') continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    if (auto err = parse_line(content, format, event)) {
      if (policy == MalformedPolicy::kFailFast) throw ParseError(line_no, *err);
      ++result.skipped;
      result.skipped_lines.push_back(line_no);
      continue;
    }
    result.events.push_back(event);
  }
  return result;
}

void write_flow_records(std::ostream& out, std::span<const FlowEvent> events,
                        char delimiter) {
  for (const auto& e : events) {
    out << e.timestamp << delimiter << e.source << delimiter << e.destination << '\n';
  }
}

EdgeIndex index_edges(std::span<const FlowEvent> events) {
  EdgeIndex index;
  for (const auto& e : events) {
    index[EdgeKey{e.source, e.destination}].push_back(e.timestamp);
  }
  for (auto& [_, times] : index) std::sort(times.begin(), times.end());
  return index;
}

std::vector<RankedTriple> select_top_triples(std::span<const FlowEvent> events,
                                             std::size_t n_triple) {
  if (events.empty()) throw ValidationError("select_top_triples: no events");
  return select_top_triples(index_edges(events), n_triple);
}

std::vector<RankedTriple> select_top_triples(const EdgeIndex& index,
                                             std::size_t n_triple) {
  if (n_triple == 0) throw ValidationError("select_top_triples: n_triple must be >= 1");

  std::map<DeviceId, NodeEdges> nodes;
  for (const auto& [edge, times] : index) {
    const auto count = static_cast<std::uint64_t>(times.size());
    if (count == 0) continue;
    nodes[edge.dst].in.emplace_back(count, edge.src);
    nodes[edge.src].out.emplace_back(count, edge.dst);
  }
  const auto by_count = [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  };

  // k-best enumeration of in x out pairs per middle node; each (i, j) has the
  // unique parent (i, j-1), or (i-1, 0) when j == 0, which never ranks after it.
  std::priority_queue<Frontier, std::vector<Frontier>, FrontierAfter> heap;
  for (auto& [name, node] : nodes) {
    node.node = name;
    std::sort(node.in.begin(), node.in.end(), by_count);
    std::sort(node.out.begin(), node.out.end(), by_count);
    if (!node.in.empty() && !node.out.empty()) {
      heap.push({node.in[0].first + node.out[0].first, &node, 0, 0});
    }
  }

  std::vector<RankedTriple> selected;
  std::set<Triple> taken;
  while (!heap.empty() && selected.size() < n_triple) {
    const Frontier top = heap.top();
    heap.pop();
    const NodeEdges& n = *top.node;
    if (top.j + 1 < n.out.size()) {
      heap.push({n.in[top.i].first + n.out[top.j + 1].first, top.node, top.i, top.j + 1});
    }
    if (top.j == 0 && top.i + 1 < n.in.size()) {
      heap.push({n.in[top.i + 1].first + n.out[0].first, top.node, top.i + 1, 0});
    }
    if (top.a() == top.c()) continue;
    Triple t{top.a(), n.node, top.c()};
    if (taken.contains(t.reversed())) continue;
    taken.insert(t);
    selected.push_back({std::move(t), n.in[top.i].first, n.out[top.j].first});
  }
  if (selected.size() < n_triple) {
    warn("select_top_triples: requested " + std::to_string(n_triple) +
         " triples, only " + std::to_string(selected.size()) + " available");
  }
  return selected;
}

std::size_t bin_count(TimeWindow window, double delta) {
  if (!(delta > 0.0)) throw ValidationError("bin width delta must be > 0");
  if (!(window.end > window.start)) {
    throw ValidationError("window end must be greater than window start");
  }
  const double n = window.length() / delta;
  const double r = std::round(n);
  if (std::abs(n - r) <= 1e-9 * std::max(1.0, r)) return static_cast<std::size_t>(r);
  return static_cast<std::size_t>(std::ceil(n));
}

BinnedSeries bin_events(std::span<const double> timestamps, double delta,
                        TimeWindow window) {
  BinnedSeries series;
  const std::size_t k_bins = bin_count(window, delta);
  series.counts.assign(k_bins, 0);
  series.delta = delta;
  series.start_time = window.start;
  for (const double t : timestamps) {
    if (!(t >= window.start && t < window.end)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "timestamp " << t << " outside window [" << window.start << ", "
          << window.end << ")";
      throw DataError(msg.str());
    }
    const auto k = std::min(
        static_cast<std::size_t>(std::floor((t - window.start) / delta)), k_bins - 1);
    ++series.counts[k];
  }
  return series;
}

BinnedSeries bin_events(std::span<const Timestamp> timestamps, double delta,
                        TimeWindow window) {
  std::vector<double> as_double(timestamps.begin(), timestamps.end());
  return bin_events(std::span<const double>(as_double), delta, window);
}

BinnedSeries centre_series(const BinnedSeries& series) {
  if (series.counts.empty()) throw ValidationError("centre_series: empty series");
  std::uint64_t total = 0;
  for (auto c : series.counts) total += c;
  const double mean = static_cast<double>(total) / static_cast<double>(series.size());
  BinnedSeries out = series;
  std::vector<double> centred(series.size());
  std::transform(series.counts.begin(), series.counts.end(), centred.begin(),
                 [mean](std::uint32_t c) { return static_cast<double>(c) - mean; });
  out.centred = std::move(centred);
  return out;
}

TimeWindow triple_window(std::span<const Timestamp> ab, std::span<const Timestamp> bc,
                         double delta) {
  if (ab.empty() && bc.empty()) throw DataError("triple_window: both edges are empty");
  if (!(delta > 0.0)) throw ValidationError("bin width delta must be > 0");
  Timestamp first = std::numeric_limits<Timestamp>::max();
  Timestamp last = std::numeric_limits<Timestamp>::min();
  for (const auto edge : {ab, bc}) {
    if (edge.empty()) continue;
    const auto [lo, hi] = std::minmax_element(edge.begin(), edge.end());
    first = std::min(first, *lo);
    last = std::max(last, *hi);
  }
  return {static_cast<double>(first), static_cast<double>(last) + delta};
}

std::vector<TripleRecord> describe_triples(const EdgeIndex& index,
                                           std::span<const RankedTriple> ranked,
                                           double delta) {
  std::vector<TripleRecord> records;
  records.reserve(ranked.size());
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = ranked[i];
    const auto ab = index.find(r.triple.edge_ab());
    const auto bc = index.find(r.triple.edge_bc());
    if (ab == index.end() || bc == index.end()) {
      throw DataError("describe_triples: edge missing from index for triple " +
                      r.triple.a + "," + r.triple.b + "," + r.triple.c);
    }
    TripleRecord rec;
    rec.index = i;
    rec.triple = r.triple;
    rec.count_ab = ab->second.size();
    rec.count_bc = bc->second.size();
    rec.window = triple_window(ab->second, bc->second, delta);
    rec.n_bins = bin_count(rec.window, delta);
    records.push_back(std::move(rec));
  }
  return records;
}

GraphSummary summarize_graph(std::span<const TripleRecord> triples) {
  if (triples.empty()) throw ValidationError("summarize_graph: no triples");
  std::set<DeviceId> nodes;
  std::set<EdgeKey> edges;
  GraphSummary s;
  s.n_triples = triples.size();
  for (const auto& t : triples) {
    nodes.insert({t.triple.a, t.triple.b, t.triple.c});
    edges.insert(t.triple.edge_ab());
    edges.insert(t.triple.edge_bc());
    const double len = t.window.length();
    s.avg_length_hours += len / 3600.0;
    s.avg_rate_ab += static_cast<double>(t.count_ab) / len;
    s.avg_rate_bc += static_cast<double>(t.count_bc) / len;
  }
  const auto n = static_cast<double>(triples.size());
  s.avg_length_hours /= n;
  s.avg_rate_ab /= n;
  s.avg_rate_bc /= n;
  s.n_nodes = nodes.size();
  s.n_unique_edges = edges.size();
  return s;
}

}  // namespace flowcoh
