#include "aspm/signal.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "aspm/text.hpp"

namespace aspm {

namespace {

bool is_blank(const std::string& line) {
  return line.find_first_not_of(" \t") == std::string::npos;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::size_t line_no,
                             const std::string& what) {
  throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + what);
}

struct Interval {
  double lo, hi;
};

double union_length(std::vector<Interval> iv, double clip_lo, double clip_hi) {
  std::sort(iv.begin(), iv.end(), [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
  double total = 0.0;
  double cur_lo = 0.0, cur_hi = 0.0;
  bool open = false;
  auto flush = [&] {
    if (!open) return;
    const double lo = std::max(cur_lo, clip_lo);
    const double hi = std::min(cur_hi, clip_hi);
    if (hi > lo) total += hi - lo;
  };
  for (const Interval& e : iv) {
    if (open && e.lo <= cur_hi) {
      cur_hi = std::max(cur_hi, e.hi);
    } else {
      flush();
      cur_lo = e.lo;
      cur_hi = e.hi;
      open = true;
    }
  }
  flush();
  return total;
}

void moments(const double* x, std::size_t n, double& mean, double& sd) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += x[i];
  mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x[i] - mean;
    sq += d * d;
  }
  sd = std::sqrt(sq / static_cast<double>(n));
}

}  // namespace

const char* to_string(Device d) {
  return d == Device::low_quality ? "low_quality" : "high_quality";
}

Device device_from_string(const std::string& s) {
  if (s == "low_quality") return Device::low_quality;
  if (s == "high_quality") return Device::high_quality;
  throw std::invalid_argument("unknown device: " + s);
}

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::apnea: return "apnea";
    case EventKind::hypopnea: return "hypopnea";
    case EventKind::artifact: return "artifact";
  }
  return "?";
}

EventKind event_kind_from_string(const std::string& s) {
  if (s == "apnea") return EventKind::apnea;
  if (s == "hypopnea") return EventKind::hypopnea;
  if (s == "artifact") return EventKind::artifact;
  throw std::invalid_argument("unknown event kind: " + s);
}

std::size_t PeriodSet::count(PeriodLabel l) const {
  std::size_t n = 0;
  for (const Period& p : periods)
    if (p.label == l) ++n;
  return n;
}

EventAnnotation normalize_annotation(EventAnnotation ann) {
  for (const ScoredEvent& e : ann.events) {
    if (!std::isfinite(e.start_s) || !std::isfinite(e.end_s) || e.end_s <= e.start_s)
      throw std::invalid_argument("annotation: event end must be after start");
    if (e.kind != EventKind::artifact && e.end_s - e.start_s < 10.0)
      throw std::invalid_argument("annotation: apnea/hypopnea events must last at least 10 s");
  }
  std::sort(ann.events.begin(), ann.events.end(), [](const ScoredEvent& a, const ScoredEvent& b) {
    if (a.start_s != b.start_s) return a.start_s < b.start_s;
    if (a.end_s != b.end_s) return a.end_s < b.end_s;
    return a.kind < b.kind;
  });
  // Merge strictly overlapping events of the same kind; touching events stay
  // distinct so event counts (and thus AHI) are preserved.
  std::vector<ScoredEvent> merged;
  for (const ScoredEvent& e : ann.events) {
    bool absorbed = false;
    for (auto it = merged.rbegin(); it != merged.rend(); ++it) {
      if (it->kind == e.kind) {
        if (e.start_s < it->end_s) {
          it->end_s = std::max(it->end_s, e.end_s);
          absorbed = true;
        }
        break;
      }
    }
    if (!absorbed) merged.push_back(e);
  }
  ann.events = std::move(merged);
  return ann;
}

Recording parse_recording(const std::filesystem::path& path, Device device,
                          const std::string& subject_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open recording file: " + path.string());

  Recording rec;
  rec.id = path.stem().string();
  rec.subject_id = subject_id;
  rec.device = device;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (is_blank(line)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) parse_fail(path, line_no, "expected 'timestamp,value'");
    double t = 0.0, v = 0.0;
    if (!parse_double(std::string_view(line).substr(0, comma), t))
      parse_fail(path, line_no, "bad timestamp");
    if (!parse_double(std::string_view(line).substr(comma + 1), v))
      parse_fail(path, line_no, "bad value");
    if (!std::isfinite(t) || !std::isfinite(v)) parse_fail(path, line_no, "non-finite sample");
    if (!rec.samples.empty() && t <= rec.samples.back().t)
      parse_fail(path, line_no, "non-increasing timestamp");
    rec.samples.push_back({t, v});
  }
  return rec;
}

void write_recording(const Recording& rec, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write recording file: " + path.string());
  std::string buf;
  buf.reserve(rec.samples.size() * 24);
  for (const Sample& s : rec.samples) {
    buf += fmt_double(s.t);
    buf += ',';
    buf += fmt_double(s.value);
    buf += '\n';
  }
  out << buf;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

EventAnnotation parse_annotation(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open annotation file: " + path.string());

  EventAnnotation ann;
  ann.recording_id = path.stem().string();

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(std::move(line));
    if (is_blank(line)) continue;
    std::istringstream ls(line);
    std::string a, b, kind;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, kind))
      parse_fail(path, line_no, "expected 'start,end,kind'");
    ScoredEvent e{};
    if (!parse_double(a, e.start_s)) parse_fail(path, line_no, "bad start");
    if (!parse_double(b, e.end_s)) parse_fail(path, line_no, "bad end");
    try {
      e.kind = event_kind_from_string(kind);
    } catch (const std::invalid_argument& ex) {
      parse_fail(path, line_no, ex.what());
    }
    ann.events.push_back(e);
  }
  try {
    return normalize_annotation(std::move(ann));
  } catch (const std::invalid_argument& ex) {
    throw std::runtime_error(path.string() + ": " + ex.what());
  }
}

void write_annotation(const EventAnnotation& ann, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write annotation file: " + path.string());
  for (const ScoredEvent& e : ann.events) {
    out << fmt_double(e.start_s) << ',' << fmt_double(e.end_s) << ',' << to_string(e.kind) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

UniformSeries resample_1hz(const Recording& rec) {
  if (rec.samples.empty()) throw std::invalid_argument("resample_1hz: empty recording");

  const long long k0 = static_cast<long long>(std::floor(rec.samples.front().t));
  const long long k1 = static_cast<long long>(std::floor(rec.samples.back().t));
  const std::size_t n = static_cast<std::size_t>(k1 - k0 + 1);

  std::vector<double> sums(n, 0.0);
  std::vector<std::size_t> counts(n, 0);
  for (const Sample& s : rec.samples) {
    const auto k = static_cast<std::size_t>(static_cast<long long>(std::floor(s.t)) - k0);
    sums[k] += s.value;
    counts[k] += 1;
  }

  UniformSeries out;
  out.recording_id = rec.id;
  out.subject_id = rec.subject_id;
  out.device = rec.device;
  out.start_time_s = static_cast<double>(k0);
  out.values.assign(n, 0.0);

  for (std::size_t i = 0; i < n; ++i)
    if (counts[i] > 0) out.values[i] = sums[i] / static_cast<double>(counts[i]);

  // Fill empty seconds: interpolate between neighbouring defined seconds,
  // nearest value at the ends.
  std::size_t prev = n;  // last defined index seen
  for (std::size_t i = 0; i < n; ++i) {
    if (counts[i] > 0) {
      if (prev == n && i > 0) {
        for (std::size_t j = 0; j < i; ++j) out.values[j] = out.values[i];
      } else if (prev != n && i > prev + 1) {
        const double span = static_cast<double>(i - prev);
        for (std::size_t j = prev + 1; j < i; ++j) {
          const double f = static_cast<double>(j - prev) / span;
          out.values[j] = out.values[prev] + f * (out.values[i] - out.values[prev]);
        }
      }
      prev = i;
    }
  }
  if (prev != n && prev + 1 < n) {
    for (std::size_t j = prev + 1; j < n; ++j) out.values[j] = out.values[prev];
  }
  return out;
}

UniformSeries standardize(const UniformSeries& series) {
  const std::size_t n = series.values.size();
  if (n < 2) throw std::invalid_argument("standardize: series length must be >= 2");
  double mean = 0.0, sd = 0.0;
  moments(series.values.data(), n, mean, sd);
  UniformSeries out = series;
  if (sd < 1e-12) {
    std::fill(out.values.begin(), out.values.end(), 0.0);
    return out;
  }
  for (double& v : out.values) v = (v - mean) / sd;
  return out;
}

UniformSeries baseline_adjust(const UniformSeries& series) {
  const std::size_t n = series.values.size();
  const std::size_t w = kPeriodSeconds;
  if (n < w) throw std::invalid_argument("baseline_adjust: series shorter than 60 s");

  UniformSeries out = series;
  const double* x = series.values.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t lo = i >= w / 2 ? i - w / 2 : 0;
    if (lo + w > n) lo = n - w;
    double mean = 0.0, sd = 0.0;
    moments(x + lo, w, mean, sd);
    out.values[i] = sd < 1e-12 ? 0.0 : (x[i] - mean) / sd;
  }
  return out;
}

PeriodSet segment_periods(const UniformSeries& series, const EventAnnotation& ann) {
  const std::size_t n_periods = series.values.size() / kPeriodSeconds;

  std::vector<Interval> apneic;
  for (const ScoredEvent& e : ann.events)
    if (e.kind != EventKind::artifact) apneic.push_back({e.start_s, e.end_s});

  PeriodSet out;
  out.periods.reserve(n_periods);
  for (std::size_t j = 0; j < n_periods; ++j) {
    Period p;
    const std::size_t base = j * kPeriodSeconds;
    std::copy_n(series.values.begin() + static_cast<std::ptrdiff_t>(base), kPeriodSeconds,
                p.values.begin());
    const double lo = series.start_time_s + static_cast<double>(base);
    const double hi = lo + static_cast<double>(kPeriodSeconds);
    const double overlap = union_length(apneic, lo, hi);
    p.label = overlap >= 10.0 ? PeriodLabel::apneic : PeriodLabel::normal;
    p.subject_id = series.subject_id;
    p.recording_id = series.recording_id;
    p.index = j;
    out.periods.push_back(std::move(p));
  }
  return out;
}

double event_union_seconds(const std::vector<ScoredEvent>& events, bool apneic_kinds,
                           double clip_lo, double clip_hi) {
  std::vector<Interval> iv;
  for (const ScoredEvent& e : events) {
    const bool is_apneic = e.kind != EventKind::artifact;
    if (is_apneic == apneic_kinds) iv.push_back({e.start_s, e.end_s});
  }
  return union_length(std::move(iv), clip_lo, clip_hi);
}

std::vector<std::size_t> filter_artifact_recordings(const std::vector<Recording>& recs,
                                                    const std::vector<EventAnnotation>& anns,
                                                    double threshold) {
  if (recs.size() != anns.size())
    throw std::invalid_argument("filter_artifact_recordings: recs/anns size mismatch");
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw std::invalid_argument("filter_artifact_recordings: threshold must be in [0,1]");

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const Recording& r = recs[i];
    const double dur = r.duration_s();
    double frac = 0.0;
    if (dur > 0.0) {
      const double artifact = event_union_seconds(anns[i].events, false, r.samples.front().t,
                                                  r.samples.back().t);
      frac = artifact / dur;
    }
    if (frac <= threshold) kept.push_back(i);
  }
  return kept;
}

}  // namespace aspm
