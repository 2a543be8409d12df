#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "flowcoh/error.hpp"
#include "flowcoh/ingest.hpp"
#include "flowcoh/spectral.hpp"
#include "flowcoh/synth.hpp"
#include "flowcoh/tapers.hpp"

using namespace flowcoh;
using Catch::Approx;

namespace {

GeneratorSpec spec_of(GeneratorKind kind, double rate, double duration, std::uint64_t seed) {
  GeneratorSpec s;
  s.kind = kind;
  s.rate = rate;
  s.duration = duration;
  s.seed = seed;
  return s;
}

void check_stream(const EventTimes& t, double duration) {
  CHECK(std::is_sorted(t.begin(), t.end()));
  if (!t.empty()) {
    CHECK(t.front() >= 0.0);
    CHECK(t.back() < duration);
  }
}

std::vector<double> binned_centred(const EventTimes& t, double duration) {
  const auto s = centre_series(bin_events(std::span<const double>(t), 1.0, {0.0, duration}));
  return *s.centred;
}

}  // namespace

TEST_CASE("generator kinds round-trip through their names", "[synth]") {
  for (auto k : {GeneratorKind::kPoisson, GeneratorKind::kModulatedPoisson, GeneratorKind::kHawkes,
                 GeneratorKind::kCoupledThinning}) {
    CHECK(parse_generator_kind(to_string(k)) == k);
  }
  CHECK(to_string(GeneratorKind::kCoupledThinning) == "coupled_thinning");
  CHECK_THROWS_AS(parse_generator_kind("brownian"), ValidationError);
}

TEST_CASE("generator specs are validated", "[synth][errors]") {
  const auto ok = spec_of(GeneratorKind::kPoisson, 0.1, 100.0, 1);
  CHECK_NOTHROW(validate(ok));
  auto bad = ok;
  bad.rate = 0.0;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = ok;
  bad.duration = -1.0;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = ok;
  bad.mod_depth = 1.0;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = ok;
  bad.coupling = 1.5;
  CHECK_THROWS_AS(validate(bad), ValidationError);
  bad = ok;
  bad.background_rate = -0.1;
  CHECK_THROWS_AS(validate(bad), ValidationError);

  auto hawkes = spec_of(GeneratorKind::kHawkes, 0.05, 100.0, 1);
  hawkes.hawkes_alpha = 1.1;
  hawkes.hawkes_beta = 1.0;
  CHECK_THROWS_AS(gen_hawkes(hawkes), ValidationError);
  CHECK_THROWS_AS(generate_pair(hawkes), ValidationError);
}

TEST_CASE("Poisson counts concentrate at rate * duration", "[synth][poisson]") {
  const auto s = spec_of(GeneratorKind::kPoisson, 0.1, 61920.0, 2718);
  const auto t = gen_poisson(s);
  check_stream(t, s.duration);
  CHECK(std::abs(static_cast<double>(t.size()) - 6192.0) <= 4.0 * std::sqrt(6192.0));

  // batch of seeds: the mean count is within 5 standard errors
  const std::size_t seeds = 50;
  double total = 0.0;
  for (std::size_t i = 0; i < seeds; ++i) {
    total += static_cast<double>(gen_poisson(spec_of(GeneratorKind::kPoisson, 0.1, 5000.0, i)).size());
  }
  CHECK(std::abs(total / seeds - 500.0) <= 5.0 * std::sqrt(500.0 / seeds));
}

TEST_CASE("tiny windows give short or empty streams", "[synth][poisson]") {
  const auto s = spec_of(GeneratorKind::kPoisson, 0.1, 0.5, 3);
  const auto t = gen_poisson(s);
  check_stream(t, 0.5);
  CHECK(t.size() <= 3);
  CHECK_NOTHROW(pair_to_flows({t, {}}, synthetic_triple(0)));
}

TEST_CASE("generators are deterministic under the seed", "[synth][property]") {
  for (auto kind : {GeneratorKind::kPoisson, GeneratorKind::kModulatedPoisson, GeneratorKind::kHawkes,
                    GeneratorKind::kCoupledThinning}) {
    auto s = spec_of(kind, 0.05, 3000.0, 99);
    s.hawkes_alpha = 0.05;
    s.hawkes_beta = 0.1;
    s.coupling = 0.5;
    s.background_rate = 0.02;
    const auto a = generate_pair(s);
    const auto b = generate_pair(s);
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    check_stream(a.first, s.duration);
    check_stream(a.second, s.duration);
    CHECK(a.first != a.second);
    s.seed = 100;
    CHECK(generate_pair(s).first != a.first);
  }
}

TEST_CASE("Hawkes counts concentrate at mu T / (1 - alpha/beta)", "[synth][hawkes]") {
  // Count variance of a stationary Hawkes process is mu T / (1 - n)^3, n = alpha/beta.
  const double mu = 0.05, t_len = 20000.0;
  for (auto [alpha, beta] : {std::pair{0.0, 1.0}, {0.05, 0.1}, {0.3, 1.0}}) {
    const double n = alpha / beta;
    const std::size_t seeds = 30;
    double total = 0.0;
    for (std::size_t i = 0; i < seeds; ++i) {
      auto s = spec_of(GeneratorKind::kHawkes, mu, t_len, 1000 + i);
      s.hawkes_alpha = alpha;
      s.hawkes_beta = beta;
      const auto t = gen_hawkes(s);
      check_stream(t, t_len);
      total += static_cast<double>(t.size());
    }
    const double expected = mu * t_len / (1.0 - n);
    const double sd = std::sqrt(mu * t_len / std::pow(1.0 - n, 3) / seeds);
    CAPTURE(alpha, beta, total / seeds, expected);
    CHECK(std::abs(total / seeds - expected) <= 5.0 * sd);
  }
}

TEST_CASE("Hawkes spectrum is raised at low frequencies", "[synth][hawkes][montecarlo]") {
  const double t_len = 20000.0;
  const auto grid = frequency_grid(0.05, 500, 1.0);
  const auto tapers = compute_dpss(20000, 3.0, 5, DpssOptions{ConcentrationPrecision::kDouble, false});
  double low = 0.0, high = 0.0;
  std::size_t n_low = 0, n_high = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto s = spec_of(GeneratorKind::kHawkes, 0.05, t_len, seed);
    s.hawkes_alpha = 0.05;
    s.hawkes_beta = 0.1;
    const auto x = binned_centred(gen_hawkes(s), t_len);
    const auto m = multitaper_spectral_matrix(x, x, tapers, grid, 1.0);
    for (std::size_t q = 0; q < grid.size(); ++q) {
      if (grid.freqs_hz[q] < 0.005) {
        low += m.s11[q];
        ++n_low;
      } else if (grid.freqs_hz[q] >= 0.04) {
        high += m.s11[q];
        ++n_high;
      }
    }
  }
  CHECK(low / static_cast<double>(n_low) > high / static_cast<double>(n_high));
}

TEST_CASE("modulated pair follows the shared intensity", "[synth][modulated]") {
  auto s = spec_of(GeneratorKind::kModulatedPoisson, 0.1, 61920.0, 12);
  s.mod_freq = 0.018;
  s.mod_depth = 0.8;
  const auto p = gen_modulated_pair(s);
  check_stream(p.first, s.duration);
  check_stream(p.second, s.duration);
  CHECK(p.first != p.second);
  // half the time the intensity is above baseline; that half holds (1 + 2d/pi)/2 of the events
  for (const auto* stream : {&p.first, &p.second}) {
    const double n = static_cast<double>(stream->size());
    CHECK(std::abs(n - 6192.0) <= 5.0 * std::sqrt(6192.0));
    double up = 0.0;
    for (double t : *stream) up += std::sin(2.0 * std::numbers::pi * 0.018 * t) > 0.0 ? 1.0 : 0.0;
    const double expected = 0.5 * (1.0 + 2.0 * 0.8 / std::numbers::pi);
    CHECK(std::abs(up / n - expected) <= 5.0 * std::sqrt(expected * (1.0 - expected) / n));
  }
}

TEST_CASE("coupled thinning copies parents into the second stream", "[synth][coupled]") {
  auto s = spec_of(GeneratorKind::kCoupledThinning, 0.1, 20000.0, 5);
  SECTION("full coupling without background gives identical streams") {
    s.coupling = 1.0;
    const auto p = gen_coupled_thinning(s);
    CHECK(p.first == p.second);
    CHECK(!p.first.empty());
  }
  SECTION("no coupling without background leaves the second stream empty") {
    s.coupling = 0.0;
    CHECK(gen_coupled_thinning(s).second.empty());
  }
  SECTION("partial coupling with background") {
    s.coupling = 0.5;
    s.background_rate = 0.05;
    const auto p = gen_coupled_thinning(s);
    check_stream(p.first, s.duration);
    check_stream(p.second, s.duration);
    const double e1 = (0.1 + 0.05) * 20000.0, e2 = (0.05 + 0.05) * 20000.0;
    CHECK(std::abs(static_cast<double>(p.first.size()) - e1) <= 5.0 * std::sqrt(e1));
    CHECK(std::abs(static_cast<double>(p.second.size()) - e2) <= 5.0 * std::sqrt(e2));
    // shared parents: most second-stream events appear in the first stream too
    std::size_t shared = 0;
    for (double t : p.second) shared += std::binary_search(p.first.begin(), p.first.end(), t) ? 1 : 0;
    const double frac = static_cast<double>(shared) / static_cast<double>(p.second.size());
    CHECK(frac == Approx(0.5).margin(0.05));
  }
}

TEST_CASE("pair_to_flows feeds the ingestion path", "[synth][ingest]") {
  const auto triple = synthetic_triple(3);
  CHECK(triple == Triple{"S3A", "S3B", "S3C"});

  auto s = spec_of(GeneratorKind::kModulatedPoisson, 0.1, 3600.0, 8);
  const auto pair = generate_pair(s);
  const auto flows = pair_to_flows(pair, triple);
  CHECK(flows.size() == pair.first.size() + pair.second.size());
  for (std::size_t i = 1; i < flows.size(); ++i) CHECK(flows[i - 1].timestamp <= flows[i].timestamp);

  std::ostringstream out;
  write_flow_records(out, flows);
  std::istringstream in(out.str());
  const auto parsed = parse_flow_records(in);
  CHECK(parsed.events == flows);

  const auto index = index_edges(parsed.events);
  const auto& ab = index.at(triple.edge_ab());
  REQUIRE(ab.size() == pair.first.size());
  for (std::size_t i = 0; i < ab.size(); ++i) {
    CHECK(ab[i] == static_cast<Timestamp>(std::floor(pair.first[i])));
  }
  CHECK(index.at(triple.edge_bc()).size() == pair.second.size());
  const auto top = select_top_triples(index, 1);
  REQUIRE(top.size() == 1);
  CHECK(top[0].triple == triple);
}
