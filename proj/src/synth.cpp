#include "flowcoh/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "flowcoh/error.hpp"
#include "flowcoh/random.hpp"

namespace flowcoh {
namespace {

double exponential(Rng& rng, double rate) { return -std::log(uniform_open01(rng)) / rate; }

EventTimes poisson(Rng& rng, double rate, double duration) {
  EventTimes out;
  if (rate <= 0.0) return out;
  out.reserve(static_cast<std::size_t>(rate * duration * 1.1) + 16);
  for (double t = exponential(rng, rate); t < duration; t += exponential(rng, rate)) {
    out.push_back(t);
  }
  return out;
}

EventTimes modulated(Rng& rng, const GeneratorSpec& s) {
  const double peak = s.rate * (1.0 + s.mod_depth);
  EventTimes out;
  for (double t = exponential(rng, peak); t < s.duration; t += exponential(rng, peak)) {
    const double intensity =
        s.rate * (1.0 + s.mod_depth * std::sin(2.0 * std::numbers::pi * s.mod_freq * t));
    if (uniform_open01(rng) * peak < intensity) out.push_back(t);
  }
  return out;
}

EventTimes hawkes(Rng& rng, const GeneratorSpec& s) {
  EventTimes out;
  double t = 0.0;
  double excitation = 0.0;  // sum_i alpha exp(-beta (t - t_i))
  while (true) {
    const double bound = s.rate + excitation;  // intensity only decays until the next event
    const double wait = exponential(rng, bound);
    t += wait;
    if (t >= s.duration) break;
    excitation *= std::exp(-s.hawkes_beta * wait);
    if (uniform_open01(rng) * bound < s.rate + excitation) {
      out.push_back(t);
      excitation += s.hawkes_alpha;
    }
  }
  return out;
}

EventTimes merged(EventTimes a, const EventTimes& b) {
  EventTimes out;
  out.reserve(a.size() + b.size());
  std::merge(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

}  // namespace

std::string_view to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::kPoisson: return "poisson";
    case GeneratorKind::kModulatedPoisson: return "modulated_poisson";
    case GeneratorKind::kHawkes: return "hawkes";
    case GeneratorKind::kCoupledThinning: return "coupled_thinning";
  }
  return "unknown";
}

GeneratorKind parse_generator_kind(std::string_view name) {
  for (auto kind : {GeneratorKind::kPoisson, GeneratorKind::kModulatedPoisson,
                    GeneratorKind::kHawkes, GeneratorKind::kCoupledThinning}) {
    if (name == to_string(kind)) return kind;
  }
  throw ValidationError("unknown generator kind '" + std::string(name) + "'");
}

void validate(const GeneratorSpec& s) {
  if (!(s.rate > 0.0) || !std::isfinite(s.rate)) throw ValidationError("generator: rate must be > 0");
  if (!(s.duration > 0.0) || !std::isfinite(s.duration)) {
    throw ValidationError("generator: duration must be > 0");
  }
  if (!(s.mod_depth >= 0.0 && s.mod_depth < 1.0)) {
    throw ValidationError("generator: mod_depth must lie in [0, 1)");
  }
  if (!(s.mod_freq >= 0.0)) throw ValidationError("generator: mod_freq must be >= 0");
  if (!(s.hawkes_alpha >= 0.0)) throw ValidationError("generator: hawkes_alpha must be >= 0");
  if (!(s.hawkes_beta > 0.0)) throw ValidationError("generator: hawkes_beta must be > 0");
  if (!(s.hawkes_alpha / s.hawkes_beta < 1.0)) {
    throw ValidationError("generator: unstable Hawkes parameters, alpha/beta = " +
                          std::to_string(s.hawkes_alpha / s.hawkes_beta) + " >= 1");
  }
  if (!(s.coupling >= 0.0 && s.coupling <= 1.0)) {
    throw ValidationError("generator: coupling must lie in [0, 1]");
  }
  if (!(s.background_rate >= 0.0)) {
    throw ValidationError("generator: background_rate must be >= 0");
  }
}

EventTimes gen_poisson(const GeneratorSpec& spec) {
  validate(spec);
  auto rng = make_rng(spec.seed, "synth/poisson");
  return poisson(rng, spec.rate, spec.duration);
}

StreamPair gen_modulated_pair(const GeneratorSpec& spec) {
  validate(spec);
  auto rng1 = make_rng(spec.seed, "synth/modulated", 1);
  auto rng2 = make_rng(spec.seed, "synth/modulated", 2);
  return {modulated(rng1, spec), modulated(rng2, spec)};
}

EventTimes gen_hawkes(const GeneratorSpec& spec) {
  validate(spec);
  auto rng = make_rng(spec.seed, "synth/hawkes");
  return hawkes(rng, spec);
}

StreamPair gen_coupled_thinning(const GeneratorSpec& spec) {
  validate(spec);
  auto parent_rng = make_rng(spec.seed, "synth/coupled", 0);
  auto thin_rng = make_rng(spec.seed, "synth/coupled", 1);
  auto bg1_rng = make_rng(spec.seed, "synth/coupled", 2);
  auto bg2_rng = make_rng(spec.seed, "synth/coupled", 3);
  const EventTimes parent = poisson(parent_rng, spec.rate, spec.duration);
  EventTimes copied;
  for (double t : parent) {
    if (uniform_open01(thin_rng) < spec.coupling) copied.push_back(t);
  }
  return {merged(parent, poisson(bg1_rng, spec.background_rate, spec.duration)),
          merged(copied, poisson(bg2_rng, spec.background_rate, spec.duration))};
}

StreamPair generate_pair(const GeneratorSpec& spec) {
  validate(spec);
  switch (spec.kind) {
    case GeneratorKind::kModulatedPoisson: return gen_modulated_pair(spec);
    case GeneratorKind::kCoupledThinning: return gen_coupled_thinning(spec);
    case GeneratorKind::kPoisson: {
      auto rng1 = make_rng(spec.seed, "synth/poisson", 1);
      auto rng2 = make_rng(spec.seed, "synth/poisson", 2);
      return {poisson(rng1, spec.rate, spec.duration), poisson(rng2, spec.rate, spec.duration)};
    }
    case GeneratorKind::kHawkes: {
      auto rng1 = make_rng(spec.seed, "synth/hawkes", 1);
      auto rng2 = make_rng(spec.seed, "synth/hawkes", 2);
      return {hawkes(rng1, spec), hawkes(rng2, spec)};
    }
  }
  throw ValidationError("generate_pair: unknown generator kind");
}

std::vector<FlowEvent> pair_to_flows(const StreamPair& pair, const Triple& devices) {
  std::vector<FlowEvent> out;
  out.reserve(pair.first.size() + pair.second.size());
  std::size_t i = 0, j = 0;
  const auto second = [](double t) { return static_cast<Timestamp>(std::floor(t)); };
  while (i < pair.first.size() || j < pair.second.size()) {
    const bool take_first =
        j == pair.second.size() ||
        (i < pair.first.size() && second(pair.first[i]) <= second(pair.second[j]));
    if (take_first) {
      out.push_back({second(pair.first[i++]), devices.a, devices.b});
    } else {
      out.push_back({second(pair.second[j++]), devices.b, devices.c});
    }
  }
  return out;
}

Triple synthetic_triple(std::size_t index) {
  const std::string stem = "S" + std::to_string(index);
  return {stem + "A", stem + "B", stem + "C"};
}

}  // namespace flowcoh
