#pragma once

// Synthetic event streams with known spectral and coherence structure.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "flowcoh/ingest.hpp"

namespace flowcoh {

enum class GeneratorKind { kPoisson, kModulatedPoisson, kHawkes, kCoupledThinning };

std::string_view to_string(GeneratorKind kind);
/// Accepts "poisson", "modulated_poisson", "hawkes", "coupled_thinning".
GeneratorKind parse_generator_kind(std::string_view name);

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::kPoisson;
  double rate = 0.1;            // events/s; baseline intensity mu for Hawkes
  double duration = 61920.0;    // seconds
  double mod_freq = 0.018;      // Hz
  double mod_depth = 0.8;       // in [0, 1)
  double hawkes_alpha = 0.0;    // jump in intensity per event
  double hawkes_beta = 1.0;     // decay rate, 1/s
  double coupling = 0.0;        // probability a parent event is copied to stream 2
  double background_rate = 0.0; // independent extra events per stream, coupled_thinning only
  std::uint64_t seed = 0;
};

/// Throws ValidationError when a field is out of range or Hawkes alpha/beta >= 1.
void validate(const GeneratorSpec& spec);

using EventTimes = std::vector<double>;  // ascending, in [0, duration)

struct StreamPair {
  EventTimes first;
  EventTimes second;
};

/// Homogeneous Poisson process of intensity `rate`.
EventTimes gen_poisson(const GeneratorSpec& spec);

/// Two streams drawn independently given the shared intensity
/// rate * (1 + mod_depth * sin(2 pi mod_freq t)), by thinning.
StreamPair gen_modulated_pair(const GeneratorSpec& spec);

/// Self-exciting process with intensity rate + sum alpha exp(-beta (t - t_i)),
/// simulated by Ogata thinning. Throws ValidationError unless alpha/beta < 1.
EventTimes gen_hawkes(const GeneratorSpec& spec);

/// Parent Poisson stream of intensity `rate`; every parent goes to stream 1 and
/// with probability `coupling` to stream 2; each stream also gets independent
/// Poisson events of intensity `background_rate`.
StreamPair gen_coupled_thinning(const GeneratorSpec& spec);

/// Pair for any kind: poisson and hawkes give two independent streams.
StreamPair generate_pair(const GeneratorSpec& spec);

/// Events on A->B (first stream) and B->C (second stream), timestamps floored
/// to integer seconds, sorted by time then stream.
std::vector<FlowEvent> pair_to_flows(const StreamPair& pair, const Triple& devices);

/// Synthetic device names for pair `index`: S<index>A, S<index>B, S<index>C.
Triple synthetic_triple(std::size_t index);

}  // namespace flowcoh
