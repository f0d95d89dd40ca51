#include "aspm/synth.hpp"

#include <cmath>
#include <stdexcept>

#include "aspm/rng.hpp"

namespace aspm {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

void validate(const SynthConfig& cfg) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("synth config: ") + what);
  };
  require(cfg.duration_s > 0.0, "duration must be positive");
  require(cfg.breath_rate_hz >= 0.0, "breath rate must be >= 0");
  require(cfg.breath_amplitude >= 0.0, "breath amplitude must be >= 0");
  require(cfg.apnea_rate_per_hour >= 0.0, "apnea rate must be >= 0");
  require(cfg.event_min_s >= 10.0, "event duration minimum is 10 s");
  require(cfg.event_max_s >= cfg.event_min_s, "event duration range inverted");
  require(cfg.hypopnea_fraction >= 0.0 && cfg.hypopnea_fraction <= 1.0,
          "hypopnea fraction must be in [0,1]");
  require(cfg.apnea_gain >= 0.0 && cfg.apnea_gain <= 1.0, "apnea gain must be in [0,1]");
  require(cfg.hypopnea_gain >= 0.0 && cfg.hypopnea_gain <= 1.0, "hypopnea gain must be in [0,1]");
  require(cfg.drift_sd >= 0.0, "drift sd must be >= 0");
  require(cfg.shift_probability >= 0.0 && cfg.shift_probability <= 1.0,
          "shift probability must be in [0,1]");
  require(cfg.noise_sd >= 0.0, "noise sd must be >= 0");
  require(cfg.sample_rate_hz > 0.0, "sample rate must be positive");
  require(cfg.jitter_sd_s >= 0.0, "jitter sd must be >= 0");
}

std::pair<Recording, EventAnnotation> generate(const SynthConfig& cfg) {
  validate(cfg);

  // Event placement and signal synthesis use independent streams so that
  // configs differing only in noise parameters share the same events.
  Rng ev_rng(mix_seed(cfg.seed, 0xEE11));
  Rng sig_rng(mix_seed(cfg.seed, 0x51C7));

  EventAnnotation ann;
  ann.recording_id = cfg.recording_id;
  if (cfg.apnea_rate_per_hour > 0.0) {
    const double rate_per_s = cfg.apnea_rate_per_hour / 3600.0;
    double t = 0.0;
    double last_end = -1.0;
    while (true) {
      t += ev_rng.exponential(rate_per_s);
      if (t >= cfg.duration_s) break;
      const double dur = ev_rng.uniform(cfg.event_min_s, cfg.event_max_s);
      const bool hypo = ev_rng.uniform() < cfg.hypopnea_fraction;
      // Poisson arrivals thinned to keep events non-overlapping (1 s guard).
      if (t < last_end + 1.0 || t + dur > cfg.duration_s) continue;
      ann.events.push_back({t, t + dur, hypo ? EventKind::hypopnea : EventKind::apnea});
      last_end = t + dur;
    }
  }

  Recording rec;
  rec.id = cfg.recording_id;
  rec.subject_id = cfg.subject_id;
  rec.device = cfg.device;
  rec.nominal_rate_hz = cfg.sample_rate_hz;

  const auto n = static_cast<std::size_t>(std::llround(cfg.duration_s * cfg.sample_rate_hz));
  rec.samples.reserve(n);

  double walk = 0.0;
  double base_shift = 0.0;
  double prev_t = -1e-6;
  long long prev_minute = -1;
  std::size_t next_event = 0;

  for (std::size_t k = 0; k < n; ++k) {
    const double t_nominal = static_cast<double>(k) / cfg.sample_rate_hz;
    double t = t_nominal;
    if (cfg.jitter_sd_s > 0.0) t += sig_rng.normal(0.0, cfg.jitter_sd_s);
    t = std::max(t, prev_t + 1e-6);
    prev_t = t;

    const auto minute = static_cast<long long>(t_nominal / 60.0);
    if (minute != prev_minute) {
      prev_minute = minute;
      if (cfg.shift_probability > 0.0 && sig_rng.uniform() < cfg.shift_probability)
        base_shift += sig_rng.normal(0.0, 2.0 * cfg.breath_amplitude);
    }
    if (cfg.drift_sd > 0.0) walk += sig_rng.normal(0.0, cfg.drift_sd);

    while (next_event < ann.events.size() && ann.events[next_event].end_s <= t) ++next_event;
    double gain = 1.0;
    if (next_event < ann.events.size() && t >= ann.events[next_event].start_s)
      gain = ann.events[next_event].kind == EventKind::hypopnea ? cfg.hypopnea_gain
                                                                : cfg.apnea_gain;

    double value = cfg.breath_amplitude * gain * std::sin(kTwoPi * cfg.breath_rate_hz * t);
    value += walk + base_shift;
    if (cfg.noise_sd > 0.0) value += sig_rng.normal(0.0, cfg.noise_sd);
    rec.samples.push_back({t, value});
  }

  return {std::move(rec), std::move(ann)};
}

}  // namespace aspm
