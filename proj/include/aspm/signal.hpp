#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace aspm {

inline constexpr std::size_t kPeriodSeconds = 60;

enum class Device : std::uint8_t { low_quality, high_quality };

const char* to_string(Device d);
Device device_from_string(const std::string& s);

struct Sample {
  double t;  // seconds
  double value;
};

// One subject-night from one device. Timestamps strictly increasing, values
// finite.
struct Recording {
  std::string id;
  std::string subject_id;
  Device device = Device::low_quality;
  std::vector<Sample> samples;
  double nominal_rate_hz = 10.0;

  double duration_s() const {
    return samples.size() < 2 ? 0.0 : samples.back().t - samples.front().t;
  }
};

enum class EventKind : std::uint8_t { apnea, hypopnea, artifact };

const char* to_string(EventKind k);
EventKind event_kind_from_string(const std::string& s);

struct ScoredEvent {
  double start_s;
  double end_s;
  EventKind kind;
};

// Expert-scored intervals on a recording's timeline. Normalized on
// construction: sorted by start, same-kind overlaps merged.
struct EventAnnotation {
  std::string recording_id;
  std::vector<ScoredEvent> events;
};

// Validates invariants (end > start, apnea/hypopnea >= 10 s), sorts by start
// and merges overlapping events of the same kind.
EventAnnotation normalize_annotation(EventAnnotation ann);

struct UniformSeries {
  std::string recording_id;
  std::string subject_id;
  Device device = Device::low_quality;
  std::vector<double> values;  // exactly 1 Hz
  double start_time_s = 0.0;
};

enum class PeriodLabel : std::uint8_t { normal = 0, apneic = 1 };

struct Period {
  std::array<double, kPeriodSeconds> values;
  PeriodLabel label = PeriodLabel::normal;
  std::string subject_id;
  std::string recording_id;
  std::size_t index = 0;  // position within the source series
};

struct PeriodSet {
  std::vector<Period> periods;

  std::size_t size() const { return periods.size(); }
  std::size_t count(PeriodLabel l) const;
};

// --- text formats -----------------------------------------------------------
// Recording file: one "timestamp_seconds,value" line per sample, '.' decimal
// separator, no header. Annotation file: "start_seconds,end_seconds,kind"
// with kind in {apnea, hypopnea, artifact}. Writers emit shortest
// round-trip float representations so write/parse is bit-exact.

Recording parse_recording(const std::filesystem::path& path, Device device,
                          const std::string& subject_id);
void write_recording(const Recording& rec, const std::filesystem::path& path);

EventAnnotation parse_annotation(const std::filesystem::path& path);
void write_annotation(const EventAnnotation& ann, const std::filesystem::path& path);

// --- pre-processing ---------------------------------------------------------

// Mean of all samples with timestamp in [k, k+1) for each integer second k
// covered by the recording. Seconds without samples are filled by linear
// interpolation between the nearest defined seconds; leading/trailing gaps
// take the nearest defined value.
UniformSeries resample_1hz(const Recording& rec);

// (x - mean) / sd over the whole series; sd below 1e-12 yields all zeros.
UniformSeries standardize(const UniformSeries& series);

// Sliding one-minute standardization: each sample is standardized against
// the 60-sample window centered on it, clamped at the series boundaries.
UniformSeries baseline_adjust(const UniformSeries& series);

// Consecutive non-overlapping 60-sample windows; a window is apneic iff its
// total overlap with apnea/hypopnea events is >= 10 s. Trailing partial
// window discarded.
PeriodSet segment_periods(const UniformSeries& series, const EventAnnotation& ann);

// Indices of recordings whose artifact fraction (artifact-event time over
// recording duration) does not exceed the threshold. recs[i] pairs with
// anns[i].
std::vector<std::size_t> filter_artifact_recordings(const std::vector<Recording>& recs,
                                                    const std::vector<EventAnnotation>& anns,
                                                    double threshold = 0.20);

// Total length of the union of events of the given kinds, optionally
// intersected with [clip_lo, clip_hi].
double event_union_seconds(const std::vector<ScoredEvent>& events,
                           bool apneic_kinds,  // true: apnea+hypopnea, false: artifact
                           double clip_lo, double clip_hi);

}  // namespace aspm
