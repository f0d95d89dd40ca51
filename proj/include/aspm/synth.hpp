#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "aspm/signal.hpp"

namespace aspm {

// Seeded generator of strain-gauge-like respiration recordings with known
// event ground truth. A sinusoidal breathing carrier collapses to
// apnea_gain/hypopnea_gain of its amplitude inside injected events; baseline
// random walk, occasional step shifts, Gaussian noise and timestamp jitter
// model the low-quality sensor.
struct SynthConfig {
  std::string subject_id = "s0";
  std::string recording_id = "s0r0";
  Device device = Device::low_quality;

  double duration_s = 4 * 3600.0;
  double breath_rate_hz = 0.25;
  double breath_amplitude = 1.0;
  double apnea_rate_per_hour = 0.0;
  double event_min_s = 10.0;
  double event_max_s = 30.0;
  double hypopnea_fraction = 0.0;
  double apnea_gain = 0.05;
  double hypopnea_gain = 0.6;
  double drift_sd = 0.0;          // random-walk step SD, per sample
  double shift_probability = 0.0; // per-minute probability of a baseline step
  double noise_sd = 0.0;
  double sample_rate_hz = 10.0;
  double jitter_sd_s = 0.0;
  std::uint64_t seed = 0;
};

void validate(const SynthConfig& cfg);

std::pair<Recording, EventAnnotation> generate(const SynthConfig& cfg);

}  // namespace aspm
