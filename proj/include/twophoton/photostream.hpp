#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twophoton/errors.hpp"
#include "twophoton/parallel.hpp"
#include "twophoton/spectrum_grid.hpp"
#include "twophoton/units.hpp"

namespace twophoton {

// Streak-camera frame geometry. Times in ps, energies in ueV relative to the
// emitter line.
struct DetectorConfig {
  double time_resolution = 3.2;
  double energy_resolution = 70.0;
  double frame_span_time = 1536.0;
  double frame_span_energy = 456.7;
  double pixel_step_energy = 10.6;
  double efficiency = 1.0;

  void validate() const {
    for (double v : {time_resolution, energy_resolution, frame_span_time, frame_span_energy, pixel_step_energy})
      if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("detector parameters must be positive and finite");
    if (pixel_step_energy > energy_resolution)
      throw ValidationError("pixel step exceeds the energy resolution");
    if (pixel_step_energy > frame_span_energy) throw ValidationError("energy span holds no pixel");
    if (!(efficiency > 0.0 && efficiency <= 1.0)) throw ValidationError("detector efficiency must lie in (0, 1]");
  }

  int pixel_count() const { return static_cast<int>(std::floor(frame_span_energy / pixel_step_energy + 1e-9)); }
  double pixel_center(int k) const { return (k - 0.5 * (pixel_count() - 1)) * pixel_step_energy; }
  double lower_edge() const { return pixel_center(0) - 0.5 * pixel_step_energy; }
  double upper_edge() const { return pixel_center(pixel_count() - 1) + 0.5 * pixel_step_energy; }

  // Pixel holding energy e, or -1 outside the pixel array.
  int pixel_of(double e) const {
    const double x = (e - lower_edge()) / pixel_step_energy;
    if (!(x >= 0.0) || x >= pixel_count()) return -1;
    return static_cast<int>(x);
  }

  long time_bin(double t) const { return static_cast<long>(std::floor(t / time_resolution)); }
  long time_bins() const { return static_cast<long>(std::ceil(frame_span_time / time_resolution - 1e-9)); }

  // Linewidth (1/ps) of the Lorentzian filter in front of each pixel.
  double filter_rate() const { return energy_to_rate(energy_resolution); }
};

enum class EmitterKind { coherent, thermal, mixture };

inline std::string to_string(EmitterKind k) {
  switch (k) {
    case EmitterKind::coherent: return "coherent";
    case EmitterKind::thermal: return "thermal";
    case EmitterKind::mixture: return "mixture";
  }
  return "?";
}

inline EmitterKind parse_emitter_kind(const std::string& s) {
  if (s == "coherent" || s == "decaying-coherent") return EmitterKind::coherent;
  if (s == "thermal" || s == "decaying-thermal") return EmitterKind::thermal;
  if (s == "mixture") return EmitterKind::mixture;
  throw ValidationError("unknown emitter kind '" + s + "'");
}

// A decaying, dephasing single mode excited at t = 0 of every frame. In a
// mixture each frame is thermal with probability thermal_weight.
struct EmitterConfig {
  EmitterKind kind = EmitterKind::coherent;
  double n0 = 1.0;
  double gamma_a = 0.2;
  double gamma_phi = 0.0;
  double thermal_weight = 0.0;

  void validate() const {
    if (!(n0 > 0.0) || !std::isfinite(n0)) throw ValidationError("emitter n0 must be positive");
    if (!(gamma_a > 0.0) || !std::isfinite(gamma_a)) throw ValidationError("emitter gamma_a must be positive");
    if (!(gamma_phi >= 0.0) || !std::isfinite(gamma_phi)) throw ValidationError("emitter gamma_phi must be non-negative");
    if (!(thermal_weight >= 0.0 && thermal_weight <= 1.0)) throw ValidationError("mixture weight must lie in [0, 1]");
  }

  double thermal_fraction() const {
    switch (kind) {
      case EmitterKind::coherent: return 0.0;
      case EmitterKind::thermal: return 1.0;
      case EmitterKind::mixture: return thermal_weight;
    }
    return 0.0;
  }

  double g2_zero() const { return 1.0 + thermal_fraction(); }
};

struct Click {
  double t = 0.0;
  double E = 0.0;
  friend bool operator==(const Click&, const Click&) = default;
};

using Frame = std::vector<Click>;

struct FrameSet {
  DetectorConfig detector;
  EmitterConfig emitter;
  std::uint64_t seed = 0;
  std::vector<Frame> frames;

  std::size_t total_clicks() const {
    std::size_t n = 0;
    for (const auto& f : frames) n += f.size();
    return n;
  }
  double mean_clicks() const { return frames.empty() ? 0.0 : double(total_clicks()) / double(frames.size()); }
};

struct SimulationOptions {
  unsigned threads = 0;
  // Integration step and duration in ps; zero selects them automatically.
  double step = 0.0;
  double duration = 0.0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t frame_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

inline double integration_step(const EmitterConfig& e, const DetectorConfig& d, const SimulationOptions& o = {}) {
  const double fastest = std::max({e.gamma_a, e.gamma_phi, d.filter_rate()});
  const double dt = o.step > 0.0 ? o.step : std::min(d.time_resolution, 0.05 / fastest);
  if (dt * e.gamma_phi > 0.1)
    throw ResolutionError("integration step " + format_double(dt) + " ps is too coarse for gamma_phi = " +
                          format_double(e.gamma_phi) + " /ps (step * gamma_phi must stay below 0.1)");
  return dt;
}

// Field integration runs until emitter and filters have rung down.
inline double integration_time(const EmitterConfig& e, const DetectorConfig& d, const SimulationOptions& o = {}) {
  const double t = o.duration > 0.0 ? o.duration : 20.0 / std::min(e.gamma_a, d.filter_rate());
  return std::min(t, d.frame_span_time);
}

namespace detail {

struct FrameWorkspace {
  std::vector<std::complex<double>> field;
  std::vector<double> cumulative;  // pixel-major, (steps + 1) entries per pixel
};

template <class Rng>
Frame simulate_frame(const EmitterConfig& e, const DetectorConfig& d, double dt, std::size_t steps, Rng& rng,
                     FrameWorkspace& ws) {
  using cplx = std::complex<double>;
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  const bool thermal = e.kind == EmitterKind::thermal ||
                       (e.kind == EmitterKind::mixture && uni(rng) < e.thermal_weight);
  cplx a0 = std::sqrt(e.n0);
  if (thermal) a0 = std::sqrt(e.n0 / 2.0) * cplx(gauss(rng), gauss(rng));
  double phi = 2.0 * std::numbers::pi * uni(rng);

  // Field on the grid: decaying amplitude with a Wiener phase.
  ws.field.resize(steps + 1);
  const double sd = std::sqrt(e.gamma_phi * dt);
  for (std::size_t j = 0; j <= steps; ++j) {
    ws.field[j] = a0 * std::exp(-0.5 * e.gamma_a * dt * double(j)) * std::polar(1.0, phi);
    if (sd > 0.0) phi += sd * gauss(rng);
  }

  const int K = d.pixel_count();
  const double G = d.filter_rate();
  ws.cumulative.assign(std::size_t(K) * (steps + 1), 0.0);
  for (int k = 0; k < K; ++k) {
    const cplx z(-0.5 * G, -energy_to_rate(d.pixel_center(k)));
    const cplx ez = std::exp(z * dt), gain = (ez - 1.0) / z;
    double* c = ws.cumulative.data() + std::size_t(k) * (steps + 1);
    cplx s = 0.0;
    double prev = 0.0;
    for (std::size_t j = 1; j <= steps; ++j) {
      s = ez * s + gain * 0.5 * (ws.field[j - 1] + ws.field[j]);
      const double now = std::norm(s);
      c[j] = c[j - 1] + 0.5 * dt * (prev + now);
      prev = now;
    }
  }

  // Flux through pixel k per unit |S_k|^2; summed over pixels it returns
  // efficiency * gamma_a * |a|^2.
  const double scale = d.efficiency * e.gamma_a * G * energy_to_rate(d.pixel_step_energy) / (2.0 * std::numbers::pi);
  Frame frame;
  for (int k = 0; k < K; ++k) {
    const double* c = ws.cumulative.data() + std::size_t(k) * (steps + 1);
    const double total = c[steps];
    if (!(total > 0.0)) continue;
    std::poisson_distribution<long> pois(scale * total);
    const long n = pois(rng);
    for (long i = 0; i < n; ++i) {
      const double u = uni(rng) * total;
      const auto it = std::upper_bound(c, c + steps + 1, u);
      const std::size_t j = std::clamp<std::size_t>(std::size_t(it - c), 1, steps);
      const double span = c[j] - c[j - 1];
      const double frac = span > 0.0 ? (u - c[j - 1]) / span : 0.0;
      const double t = dt * (double(j - 1) + std::clamp(frac, 0.0, 1.0));
      const long bin = d.time_bin(t);
      if (bin < 0 || bin >= d.time_bins()) continue;
      frame.push_back({(double(bin) + 0.5) * d.time_resolution, d.pixel_center(k)});
    }
  }
  std::sort(frame.begin(), frame.end(), [](const Click& x, const Click& y) { return x.t < y.t || (x.t == y.t && x.E < y.E); });
  return frame;
}

}  // namespace detail

// Frame i depends only on (seed, i), so the output is the same for any
// number of worker threads.
inline FrameSet simulate_frames(const EmitterConfig& e, const DetectorConfig& d, std::size_t n_frames,
                                std::uint64_t seed, const SimulationOptions& o = {}) {
  e.validate();
  d.validate();
  if (n_frames == 0) throw ValidationError("at least one frame is required");
  const double dt = integration_step(e, d, o);
  const auto steps = static_cast<std::size_t>(std::ceil(integration_time(e, d, o) / dt));
  FrameSet fs{d, e, seed, std::vector<Frame>(n_frames)};
  const unsigned threads = resolve_threads(o.threads);
  std::vector<detail::FrameWorkspace> ws(threads);
  parallel_for(n_frames, threads, [&](unsigned w, std::size_t i) {
    std::mt19937_64 rng(frame_seed(seed, i));
    fs.frames[i] = detail::simulate_frame(e, d, dt, steps, rng, ws[w]);
  });
  return fs;
}

// ---------------------------------------------------------------------------
// Frame files

inline Metadata frame_metadata(const FrameSet& fs) {
  const auto& d = fs.detector;
  const auto& e = fs.emitter;
  return {{"format", "frames 1"},
          {"seed", std::to_string(fs.seed)},
          {"frames", std::to_string(fs.frames.size())},
          {"time_resolution", format_double(d.time_resolution)},
          {"energy_resolution", format_double(d.energy_resolution)},
          {"frame_span_time", format_double(d.frame_span_time)},
          {"frame_span_energy", format_double(d.frame_span_energy)},
          {"pixel_step_energy", format_double(d.pixel_step_energy)},
          {"efficiency", format_double(d.efficiency)},
          {"emitter", to_string(e.kind)},
          {"n0", format_double(e.n0)},
          {"gamma_a", format_double(e.gamma_a)},
          {"gamma_phi", format_double(e.gamma_phi)},
          {"thermal_weight", format_double(e.thermal_weight)},
          {"mean_clicks", format_double(fs.mean_clicks())}};
}

inline std::string format_frames(const FrameSet& fs, const Metadata& extra = {}) {
  std::ostringstream out;
  detail::write_header(out, frame_metadata(fs));
  detail::write_header(out, extra);
  for (std::size_t i = 0; i < fs.frames.size(); ++i) {
    out << "FRAME " << i << '\n';
    for (const auto& c : fs.frames[i]) out << format_double(c.t) << ',' << format_double(c.E) << '\n';
  }
  return out.str();
}

inline void write_frames(const std::filesystem::path& path, const FrameSet& fs, const Metadata& extra = {}) {
  atomic_write(path, format_frames(fs, extra));
}

inline FrameSet parse_frames(const std::string& text, Metadata* extra = nullptr) {
  FrameSet fs;
  std::istringstream in(text);
  std::string line;
  std::size_t expected = 0;
  bool have_count = false;
  const auto known = frame_metadata(fs);
  auto is_known = [&](const std::string& k) {
    return std::any_of(known.begin(), known.end(), [&](const auto& kv) { return kv.first == k; });
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(": ");
      if (colon == std::string::npos || line.size() < 3) continue;
      const std::string k = line.substr(2, colon - 2), v = line.substr(colon + 2);
      if (k == "seed") fs.seed = std::stoull(v);
      else if (k == "frames") expected = std::stoul(v), have_count = true;
      else if (k == "time_resolution") fs.detector.time_resolution = parse_double(v);
      else if (k == "energy_resolution") fs.detector.energy_resolution = parse_double(v);
      else if (k == "frame_span_time") fs.detector.frame_span_time = parse_double(v);
      else if (k == "frame_span_energy") fs.detector.frame_span_energy = parse_double(v);
      else if (k == "pixel_step_energy") fs.detector.pixel_step_energy = parse_double(v);
      else if (k == "efficiency") fs.detector.efficiency = parse_double(v);
      else if (k == "emitter") fs.emitter.kind = parse_emitter_kind(v);
      else if (k == "n0") fs.emitter.n0 = parse_double(v);
      else if (k == "gamma_a") fs.emitter.gamma_a = parse_double(v);
      else if (k == "gamma_phi") fs.emitter.gamma_phi = parse_double(v);
      else if (k == "thermal_weight") fs.emitter.thermal_weight = parse_double(v);
      else if (k == "format") {
        if (v != "frames 1") throw ValidationError("unsupported frame file format '" + v + "'");
      }
      if (extra && !is_known(k)) extra->emplace_back(k, v);
      continue;
    }
    if (line.rfind("FRAME ", 0) == 0) {
      const auto idx = std::stoul(line.substr(6));
      if (idx != fs.frames.size()) throw ValidationError("frame records out of order at '" + line + "'");
      fs.frames.emplace_back();
      continue;
    }
    if (fs.frames.empty()) throw ValidationError("click row before the first FRAME record: " + line);
    const auto fields = detail::split(line, ',');
    if (fields.size() != 2) throw ValidationError("expected t_ps,E_ueV: " + line);
    fs.frames.back().push_back({parse_double(fields[0]), parse_double(fields[1])});
  }
  if (have_count && expected != fs.frames.size())
    throw ValidationError("frame file declares " + std::to_string(expected) + " frames but holds " +
                          std::to_string(fs.frames.size()));
  fs.detector.validate();
  return fs;
}

inline FrameSet read_frames(const std::filesystem::path& path, Metadata* extra = nullptr) {
  return parse_frames(read_file(path), extra);
}

// ---------------------------------------------------------------------------
// Correlations

// Energy window [lo, hi) in ueV; must be a union of whole pixels.
struct EnergyWindow {
  double lo = 0.0;
  double hi = 0.0;
};

inline EnergyWindow centered_window(double center, double width) {
  return {center - 0.5 * width, center + 0.5 * width};
}

inline EnergyWindow full_window(const DetectorConfig& d) { return {d.lower_edge(), d.upper_edge()}; }

// Pixel range [first, last) covered by a window.
inline std::pair<int, int> window_pixels(const DetectorConfig& d, const EnergyWindow& w) {
  const double step = d.pixel_step_energy;
  auto edge = [&](double e) {
    const double x = (e - d.lower_edge()) / step;
    const double r = std::round(x);
    if (std::abs(x - r) > 1e-6) return -1L;
    return static_cast<long>(r);
  };
  const long a = edge(w.lo), b = edge(w.hi);
  if (a < 0 || b < 0)
    throw ValidationError("window [" + format_double(w.lo) + ", " + format_double(w.hi) +
                          ") is not a union of whole pixels");
  if (b <= a) throw ValidationError("window must contain at least one pixel");
  if (b > d.pixel_count()) throw ValidationError("window extends beyond the frame energy span");
  return {int(a), int(b)};
}

// Delay bin [lo, hi) in ps, on |tau| when folded. Delays are measured in
// whole detector time bins.
struct TauBin {
  double lo = 0.0;
  double hi = 0.0;
};

inline std::vector<TauBin> uniform_tau_bins(double lo, double hi, std::size_t n) {
  if (n == 0 || !(hi > lo)) throw ValidationError("invalid tau binning");
  std::vector<TauBin> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({lo + (hi - lo) * double(i) / double(n), lo + (hi - lo) * double(i + 1) / double(n)});
  return out;
}

struct CorrelationOptions {
  bool fold = true;
  std::size_t bootstrap = 0;
  std::uint64_t bootstrap_seed = 1;
};

struct Correlation {
  std::vector<TauBin> bins;
  std::vector<double> g2;
  std::vector<double> numerator;    // within-frame ordered pairs
  std::vector<double> denominator;  // cross-frame pairs per frame
  std::vector<double> standard_error;
  std::size_t clicks1 = 0;
  std::size_t clicks2 = 0;
  std::size_t frames = 0;
};

namespace detail {

struct LagCounts {
  long max_lag = 0;
  std::vector<double> v;  // index lag + max_lag
  explicit LagCounts(long m = 0) : max_lag(m), v(std::size_t(2 * m + 1), 0.0) {}
  double& operator[](long lag) { return v[std::size_t(lag + max_lag)]; }
  double operator[](long lag) const { return v[std::size_t(lag + max_lag)]; }
};

struct WindowedFrame {
  std::vector<long> t1, t2;                  // time bins of clicks in each window
  std::vector<std::pair<long, double>> pairs;  // within-frame lag counts, i != j
  double self = 0.0;                          // clicks falling in both windows
};

inline bool lag_in_bin(long lag, double res, const TauBin& b, bool fold) {
  const double tau = (fold ? double(std::abs(lag)) : double(lag)) * res;
  const double tol = 1e-9 * res;
  return tau >= b.lo - tol && tau < b.hi - tol;
}

}  // namespace detail

inline Correlation correlate_clicks(const FrameSet& fs, const EnergyWindow& w1, const EnergyWindow& w2,
                                    const std::vector<TauBin>& bins, const CorrelationOptions& opts = {}) {
  const auto& d = fs.detector;
  d.validate();
  const auto [a1, b1] = window_pixels(d, w1);
  const auto [a2, b2] = window_pixels(d, w2);
  if (bins.empty()) throw ValidationError("no tau bins requested");
  for (const auto& b : bins)
    if (!(b.hi > b.lo)) throw ValidationError("tau bin with empty range");
  const std::size_t F = fs.frames.size();
  if (F < 2) throw InsufficientStatisticsError("correlations need at least 2 frames, got " + std::to_string(F));

  const double res = d.time_resolution;
  long max_lag = 0;
  for (const auto& b : bins)
    max_lag = std::max(max_lag, static_cast<long>(std::ceil(std::max(std::abs(b.lo), std::abs(b.hi)) / res)) + 1);

  std::vector<detail::WindowedFrame> wf(F);
  long kmin = std::numeric_limits<long>::max(), kmax = std::numeric_limits<long>::min();
  Correlation out;
  out.frames = F;
  for (std::size_t f = 0; f < F; ++f) {
    auto& w = wf[f];
    std::vector<int> in1, in2;
    const auto& frame = fs.frames[f];
    for (std::size_t i = 0; i < frame.size(); ++i) {
      const int p = d.pixel_of(frame[i].E);
      const bool x1 = p >= a1 && p < b1, x2 = p >= a2 && p < b2;
      if (!x1 && !x2) continue;
      const long k = d.time_bin(frame[i].t);
      kmin = std::min(kmin, k);
      kmax = std::max(kmax, k);
      if (x1) w.t1.push_back(k), in1.push_back(int(i));
      if (x2) w.t2.push_back(k), in2.push_back(int(i));
      if (x1 && x2) w.self += 1.0;
    }
    std::map<long, double> lag;
    for (std::size_t i = 0; i < in1.size(); ++i)
      for (std::size_t j = 0; j < in2.size(); ++j) {
        if (in1[i] == in2[j]) continue;
        const long L = w.t2[j] - w.t1[i];
        if (std::abs(L) <= max_lag) lag[L] += 1.0;
      }
    w.pairs.assign(lag.begin(), lag.end());
    out.clicks1 += w.t1.size();
    out.clicks2 += w.t2.size();
  }
  if (out.clicks1 == 0 || out.clicks2 == 0)
    throw InsufficientStatisticsError("empty window: " + std::to_string(out.clicks1) + " clicks in window 1, " +
                                      std::to_string(out.clicks2) + " in window 2 over " + std::to_string(F) +
                                      " frames");

  const auto nk = std::size_t(kmax - kmin + 1);
  // Estimate from frame multiplicities m (all ones for the point estimate).
  auto estimate = [&](const std::vector<double>& m, std::vector<double>& g2, std::vector<double>* num,
                      std::vector<double>* den) {
    std::vector<double> h1(nk, 0.0), h2(nk, 0.0);
    detail::LagCounts within(max_lag), pairs(max_lag);
    double self = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
      if (m[f] == 0.0) continue;
      for (long k : wf[f].t1) h1[std::size_t(k - kmin)] += m[f];
      for (long k : wf[f].t2) h2[std::size_t(k - kmin)] += m[f];
      for (const auto& [L, c] : wf[f].pairs) pairs[L] += m[f] * c;
      self += m[f] * wf[f].self;
    }
    double frames = 0.0;
    for (double x : m) frames += x;
    g2.assign(bins.size(), 0.0);
    if (num) num->assign(bins.size(), 0.0);
    if (den) den->assign(bins.size(), 0.0);
    for (long L = -max_lag; L <= max_lag; ++L) {
      bool used = false;
      for (const auto& b : bins) used = used || detail::lag_in_bin(L, res, b, opts.fold);
      if (!used) continue;
      double total = 0.0;
      for (long k = 0; k < long(nk); ++k) {
        const long k2 = k + L;
        if (k2 >= 0 && k2 < long(nk)) total += h1[std::size_t(k)] * h2[std::size_t(k2)];
      }
      within[L] = total - pairs[L] - (L == 0 ? self : 0.0);
    }
    for (std::size_t b = 0; b < bins.size(); ++b) {
      double n = 0.0, c = 0.0;
      for (long L = -max_lag; L <= max_lag; ++L)
        if (detail::lag_in_bin(L, res, bins[b], opts.fold)) n += pairs[L], c += within[L];
      const double per_frame = c / (frames - 1.0);
      g2[b] = per_frame > 0.0 ? n / per_frame : std::numeric_limits<double>::quiet_NaN();
      if (num) (*num)[b] = n;
      if (den) (*den)[b] = per_frame;
    }
  };

  out.bins = bins;
  estimate(std::vector<double>(F, 1.0), out.g2, &out.numerator, &out.denominator);
  out.standard_error.assign(bins.size(), std::numeric_limits<double>::quiet_NaN());
  if (opts.bootstrap > 1) {
    std::mt19937_64 rng(splitmix64(opts.bootstrap_seed));
    std::uniform_int_distribution<std::size_t> pick(0, F - 1);
    std::vector<double> m(F), g;
    std::vector<double> sum(bins.size(), 0.0), sum2(bins.size(), 0.0), count(bins.size(), 0.0);
    for (std::size_t r = 0; r < opts.bootstrap; ++r) {
      std::fill(m.begin(), m.end(), 0.0);
      for (std::size_t i = 0; i < F; ++i) m[pick(rng)] += 1.0;
      estimate(m, g, nullptr, nullptr);
      for (std::size_t b = 0; b < bins.size(); ++b)
        if (std::isfinite(g[b])) sum[b] += g[b], sum2[b] += g[b] * g[b], count[b] += 1.0;
    }
    for (std::size_t b = 0; b < bins.size(); ++b)
      if (count[b] > 1.0) {
        const double mean = sum[b] / count[b];
        out.standard_error[b] = std::sqrt(std::max(0.0, (sum2[b] - count[b] * mean * mean) / (count[b] - 1.0)));
      }
  }
  return out;
}

// Coincidence map over all window-centre pairs: g2 of delays |tau| <=
// tau_window between windows of the given width.
inline SpectrumGrid scan_2ps(const FrameSet& fs, double window_width, double tau_window) {
  const auto& d = fs.detector;
  d.validate();
  const double ratio = window_width / d.pixel_step_energy;
  const long w = std::lround(ratio);
  if (std::abs(ratio - double(w)) > 1e-6 || w < 1)
    throw ValidationError("window width " + format_double(window_width) + " is not a multiple of the pixel step");
  const int K = d.pixel_count();
  if (w > K) throw ValidationError("window wider than the frame energy span");
  if (!(tau_window >= 0.0)) throw ValidationError("tau window must be non-negative");
  const std::size_t F = fs.frames.size();
  if (F < 2) throw InsufficientStatisticsError("correlations need at least 2 frames, got " + std::to_string(F));

  const double res = d.time_resolution;
  const long Lw = static_cast<long>(std::floor(tau_window / res + 1e-9));
  long kmin = std::numeric_limits<long>::max(), kmax = std::numeric_limits<long>::min();
  for (const auto& frame : fs.frames)
    for (const auto& c : frame) {
      if (d.pixel_of(c.E) < 0) continue;
      kmin = std::min(kmin, d.time_bin(c.t));
      kmax = std::max(kmax, d.time_bin(c.t));
    }
  if (kmax < kmin) throw InsufficientStatisticsError("frame set holds no clicks inside the pixel array");
  const auto nk = std::size_t(kmax - kmin + 1);

  // Pixel-resolved time histograms and within-frame pair counts.
  Eigen::MatrixXd hist = Eigen::MatrixXd::Zero(K, Eigen::Index(nk));
  Eigen::MatrixXd within = Eigen::MatrixXd::Zero(K, K);
  Eigen::VectorXd singles = Eigen::VectorXd::Zero(K);
  std::vector<std::pair<int, long>> pk;
  for (const auto& frame : fs.frames) {
    pk.clear();
    for (const auto& c : frame) {
      const int p = d.pixel_of(c.E);
      if (p < 0) continue;
      pk.emplace_back(p, d.time_bin(c.t) - kmin);
    }
    for (std::size_t i = 0; i < pk.size(); ++i) {
      hist(pk[i].first, Eigen::Index(pk[i].second)) += 1.0;
      singles(pk[i].first) += 1.0;
      for (std::size_t j = 0; j < pk.size(); ++j)
        if (i != j && std::abs(pk[j].second - pk[i].second) <= Lw) within(pk[i].first, pk[j].first) += 1.0;
    }
  }
  // All ordered click pairs within the delay window, any frames.
  Eigen::MatrixXd cum = Eigen::MatrixXd::Zero(K, Eigen::Index(nk) + 1);
  for (Eigen::Index k = 0; k < Eigen::Index(nk); ++k) cum.col(k + 1) = cum.col(k) + hist.col(k);
  Eigen::MatrixXd spread(K, Eigen::Index(nk));
  for (Eigen::Index k = 0; k < Eigen::Index(nk); ++k) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, k - Lw), hi = std::min<Eigen::Index>(Eigen::Index(nk), k + Lw + 1);
    spread.col(k) = cum.col(hi) - cum.col(lo);
  }
  Eigen::MatrixXd all = hist * spread.transpose();
  Eigen::MatrixXd cross = all - within;
  cross.diagonal() -= singles;

  // Window sums through 2D prefix sums over pixel blocks.
  auto block_sums = [&](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(K + 1, K + 1);
    for (int i = 0; i < K; ++i)
      for (int j = 0; j < K; ++j) p(i + 1, j + 1) = m(i, j) + p(i, j + 1) + p(i + 1, j) - p(i, j);
    return p;
  };
  const Eigen::MatrixXd pn = block_sums(within), pc = block_sums(cross);
  const int n = K - int(w) + 1;
  std::vector<double> axis(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) axis[std::size_t(i)] = 0.5 * (d.pixel_center(i) + d.pixel_center(i + int(w) - 1));
  SpectrumGrid g = SpectrumGrid::make(axis, axis, window_width);
  g.tau = tau_window;
  auto rect = [&](const Eigen::MatrixXd& p, int i, int j) {
    return p(i + w, j + w) - p(i, j + w) - p(i + w, j) + p(i, j);
  };
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double c = rect(pc, i, j) / double(F - 1);
      if (!(c > 0.0))
        throw InsufficientStatisticsError("no cross-frame pairs for windows centred at " + format_double(axis[std::size_t(i)]) +
                                          " and " + format_double(axis[std::size_t(j)]) + " ueV");
      g.values(i, j) = rect(pn, i, j) / c;
    }
  g.metadata = {{"energy_unit", "ueV"},
                {"window_width", format_double(window_width)},
                {"tau_window", format_double(tau_window)},
                {"clicks", std::to_string(fs.total_clicks())}};
  return g;
}

// ---------------------------------------------------------------------------
// Line shape

// Expected share of clicks per pixel: the emission line, a Lorentzian of full
// width gamma_a + gamma_phi, seen through the pixel filters of width
// filter_rate; the convolution is again Lorentzian.
inline std::vector<double> expected_pixel_weights(const EmitterConfig& e, const DetectorConfig& d) {
  const double width = e.gamma_a + e.gamma_phi + d.filter_rate();
  std::vector<double> p(std::size_t(d.pixel_count()));
  double total = 0.0;
  for (int k = 0; k < d.pixel_count(); ++k) {
    const double x = energy_to_rate(d.pixel_center(k));
    total += p[std::size_t(k)] = 1.0 / (x * x + 0.25 * width * width);
  }
  for (double& v : p) v /= total;
  return p;
}

inline std::vector<double> pixel_counts(const FrameSet& fs) {
  std::vector<double> c(std::size_t(fs.detector.pixel_count()), 0.0);
  for (const auto& f : fs.frames)
    for (const auto& click : f) {
      const int p = fs.detector.pixel_of(click.E);
      if (p >= 0) c[std::size_t(p)] += 1.0;
    }
  return c;
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 0.0;
  std::size_t samples = 0;
};

// Asymptotic Kolmogorov distribution, with the usual small-sample
// correction of the argument.
inline double kolmogorov_p_value(double D, std::size_t n) {
  const double sn = std::sqrt(double(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * D;
  if (lambda < 1e-3) return 1.0;
  double sum = 0.0, sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
    sum += term;
    if (std::abs(term) < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// One-sample KS test of the energy marginal against the expected pixel weights.
inline KsResult energy_marginal_test(const FrameSet& fs) {
  const auto counts = pixel_counts(fs);
  const auto model = expected_pixel_weights(fs.emitter, fs.detector);
  double n = 0.0;
  for (double c : counts) n += c;
  if (n == 0.0) throw InsufficientStatisticsError("no clicks inside the pixel array");
  double emp = 0.0, cdf = 0.0, D = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    emp += counts[k] / n;
    cdf += model[k];
    D = std::max(D, std::abs(emp - cdf));
  }
  const auto samples = static_cast<std::size_t>(n);
  return {D, kolmogorov_p_value(D, samples), samples};
}

}  // namespace twophoton
