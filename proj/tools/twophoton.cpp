#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "twophoton/analytic.hpp"
#include "twophoton/condensate.hpp"
#include "twophoton/errors.hpp"
#include "twophoton/moments.hpp"
#include "twophoton/photostream.hpp"
#include "twophoton/sensor.hpp"
#include "twophoton/spectrum_grid.hpp"
#include "twophoton/units.hpp"
#include "twophoton/version.hpp"

using namespace twophoton;
using json = nlohmann::json;

namespace {

enum Exit { kOk = 0, kFailure = 1, kConfig = 2, kNumerical = 3, kStatistics = 4 };

const std::vector<std::string> kCommands{"formfactor", "spont2ps", "cond2ps", "g2tau", "stream", "correlate"};

struct Global {
  std::string config;
  std::string output;
  std::string units = "natural";
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

// Frequencies and rates are in units of gamma_a in natural mode and in ueV
// (hbar * rate) in physical mode, where times are in ps.
struct Units {
  bool physical = false;
  double gamma_a = 1.0;

  double freq(double x) const { return physical ? x / gamma_a : x; }
  double time(double t) const { return physical ? t * energy_to_rate(gamma_a) : t; }
  std::string freq_unit() const { return physical ? "ueV" : "gamma_a"; }
  std::string time_unit() const { return physical ? "ps" : "1/gamma_a"; }
};

struct GridArgs {
  std::optional<double> gamma_a;
  std::optional<double> Gamma;
  std::optional<double> omega_min;
  std::optional<double> omega_max;
  std::size_t points = 61;
};

struct FormFactorArgs {
  GridArgs grid;
  std::optional<double> gamma_phi;
};

struct Spont2psArgs {
  GridArgs grid;
  std::optional<double> gamma_phi;
  std::string state = "thermal";
  double n0 = 1.0;
  int n = 2;
};

struct CondensateArgs {
  GridArgs grid;
  std::optional<double> gamma_b;
  std::optional<double> P_b;
  std::optional<double> P_ba;
  double epsilon = SensorOptions{}.epsilon;
};

struct G2tauArgs {
  CondensateArgs cond;
  std::string probe = "antidiagonal";
  double omega1 = 0.0;
  double omega2 = 0.0;
  std::optional<double> tau_max;
  std::size_t tau_points = 81;
};

struct StreamArgs {
  EmitterConfig emitter;
  std::string kind = "coherent";
  DetectorConfig detector;
  std::size_t frames = 1000;
  double step = 0.0;
};

struct CorrelateArgs {
  std::string input;
  std::optional<double> window_width;
  std::optional<double> tau_window;
  bool trace = false;
  std::optional<double> window1_lo, window1_hi, window2_lo, window2_hi;
  double tau_max = 100.0;
  std::size_t tau_bins = 25;
  std::size_t bootstrap = 0;
};

void add_grid_options(CLI::App* sub, GridArgs& g, std::size_t default_points) {
  g.points = default_points;
  sub->add_option("--gamma_a", g.gamma_a, "Emitter decay rate (physical units only)");
  sub->add_option("--Gamma", g.Gamma, "Filter linewidth (default gamma_a/2)");
  sub->add_option("--omega_min", g.omega_min, "Lower end of both frequency axes");
  sub->add_option("--omega_max", g.omega_max, "Upper end of both frequency axes");
  sub->add_option("--points", g.points, "Points per axis")->capture_default_str();
}

void add_condensate_options(CLI::App* sub, CondensateArgs& c, std::size_t default_points) {
  add_grid_options(sub, c.grid, default_points);
  sub->add_option("--gamma_b", c.gamma_b, "Reservoir decay rate (default gamma_a)");
  sub->add_option("--P_b", c.P_b, "Reservoir pump rate (default gamma_a)");
  sub->add_option("--P_ba", c.P_ba, "Reservoir to condensate scattering rate (default 10 gamma_a)");
  sub->add_option("--epsilon", c.epsilon, "Sensor coupling in units of gamma_a")->capture_default_str();
}

// Config values fill options that were not given on the command line.
void apply_block(CLI::App* sub, const json& block) {
  if (!block.is_object()) throw ValidationError("config block '" + sub->get_name() + "' must be an object");
  for (const auto& [key, value] : block.items()) {
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) throw ValidationError("unknown parameter '" + key + "' for command " + sub->get_name());
    if (opt->count() > 0) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) opt->add_result("true");
      else opt->add_result("false");
    } else if (value.is_string()) {
      opt->add_result(value.get<std::string>());
    } else if (value.is_number()) {
      opt->add_result(value.is_number_float() ? format_double(value.get<double>()) : value.dump());
    } else {
      throw ValidationError("parameter '" + key + "' must be a number, string or boolean");
    }
    opt->run_callback();
  }
}

json load_config(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("cannot parse config " + path + ": " + e.what());
  }
}

// The single command block of a config file.
std::string config_command(const json& cfg) {
  if (!cfg.is_object()) throw ValidationError("config must be a JSON object");
  std::string found;
  for (const auto& c : kCommands)
    if (cfg.contains(c)) {
      if (!found.empty()) throw ValidationError("config holds more than one command block: " + found + ", " + c);
      found = c;
    }
  if (cfg.contains("command")) {
    const auto named = cfg.at("command").get<std::string>();
    if (!found.empty() && named != found)
      throw ValidationError("config command '" + named + "' does not match its block '" + found + "'");
    found = named;
  }
  if (found.empty()) throw ValidationError("config names no command");
  return found;
}

void apply_global(const json& cfg, CLI::App& app) {
  for (const auto& [key, value] : cfg.items()) {
    if (key == "command" || std::find(kCommands.begin(), kCommands.end(), key) != kCommands.end()) continue;
    if (key != "seed" && key != "threads" && key != "units" && key != "output")
      throw ValidationError("unknown top-level config key '" + key + "'");
    CLI::Option* opt = app.get_option("--" + key);
    if (opt->count() > 0) continue;
    opt->add_result(value.is_string() ? value.get<std::string>() : value.dump());
    opt->run_callback();
  }
}

Units resolve_units(const Global& g, const GridArgs& grid) {
  Units u;
  if (g.units == "physical") {
    if (!grid.gamma_a) throw ValidationError("physical units need --gamma_a in ueV");
    if (!(*grid.gamma_a > 0.0)) throw ValidationError("gamma_a must be positive");
    u.physical = true;
    u.gamma_a = *grid.gamma_a;
  } else if (grid.gamma_a && *grid.gamma_a != 1.0) {
    throw ValidationError("natural units fix gamma_a = 1; use --units physical to set it");
  }
  return u;
}

// Axis in user units; value multiples of gamma_a when not given.
std::vector<double> grid_axis(const GridArgs& g, const Units& u, double lo, double hi) {
  const double a = g.omega_min.value_or(lo * u.gamma_a), b = g.omega_max.value_or(hi * u.gamma_a);
  if (g.points < 1) throw ValidationError("grid needs at least one point");
  if (g.points > 1 && !(b > a)) throw ValidationError("omega_max must exceed omega_min");
  return linspace(a, b, g.points);
}

Metadata provenance(const std::string& command, const Global& g, const Units& u) {
  return {{"program", "twophoton"},
          {"version", kVersion},
          {"command", command},
          {"units", g.units},
          {"frequency_unit", u.freq_unit()},
          {"seed", std::to_string(g.seed)}};
}

void emit(const Global& g, const std::string& text) {
  if (g.output.empty() || g.output == "-") {
    std::cout << text;
    return;
  }
  atomic_write(g.output, text);
}

void append(Metadata& m, const Metadata& extra) { m.insert(m.end(), extra.begin(), extra.end()); }

int run_formfactor(const Global& g, const FormFactorArgs& a) {
  const Units u = resolve_units(g, a.grid);
  const double Gamma = a.grid.Gamma.value_or(0.5 * u.gamma_a);
  const double gphi = a.gamma_phi.value_or(u.gamma_a);
  const auto axis = grid_axis(a.grid, u, -3.0, 3.0);
  const DecayDephaseParams p{1.0, u.freq(gphi)};
  SpectrumGrid grid = SpectrumGrid::make(axis, axis, Gamma);
  for (std::size_t i = 0; i < axis.size(); ++i)
    for (std::size_t j = 0; j < axis.size(); ++j)
      grid.values(Eigen::Index(i), Eigen::Index(j)) = boson_form_factor(u.freq(axis[i]), u.freq(axis[j]), u.freq(Gamma), p);
  grid.metadata = provenance("formfactor", g, u);
  append(grid.metadata, {{"gamma_a", format_double(u.gamma_a)}, {"gamma_phi", format_double(gphi)}});
  emit(g, format_grid(grid));
  return kOk;
}

int run_spont2ps(const Global& g, const Spont2psArgs& a) {
  const Units u = resolve_units(g, a.grid);
  const double Gamma = a.grid.Gamma.value_or(0.5 * u.gamma_a);
  const double gphi = a.gamma_phi.value_or(u.gamma_a);
  const auto axis = grid_axis(a.grid, u, -3.0, 3.0);

  // Frames carry no phase reference, so every state enters phase averaged.
  double n0 = a.n0, g2_0 = 1.0;
  if (a.state == "thermal") {
    g2_0 = 2.0;
  } else if (a.state == "coherent") {
    g2_0 = 1.0;
  } else if (a.state == "fock") {
    if (a.n < 1) throw ValidationError("fock state needs n >= 1");
    n0 = a.n;
    g2_0 = 1.0 - 1.0 / a.n;
  } else {
    throw ValidationError("unknown state '" + a.state + "' (thermal, coherent or fock)");
  }
  if (!(n0 > 0.0)) throw ValidationError("initial population must be positive");

  FockSpace space({"a"}, {2});
  const LindbladModel model(space, {{Monomial::lower(0), 1.0}, {Monomial::number(0), u.freq(gphi)}});
  const auto base = build_moment_system(model, 0, 2);
  const auto sys = base.with_initial(phase_averaged_moments(base.basis, n0, g2_0));

  SpectrumGrid grid = SpectrumGrid::make(axis, axis, Gamma);
  const std::size_t n = axis.size();
  parallel_for(n * n, g.threads, [&](unsigned, std::size_t k) {
    const std::size_t i = k / n, j = k % n;
    const auto f = FilterParams::equal(u.freq(axis[i]), u.freq(axis[j]), u.freq(Gamma));
    grid.values(Eigen::Index(i), Eigen::Index(j)) = spontaneous_2ps(sys, f).g2;
  });
  grid.metadata = provenance("spont2ps", g, u);
  append(grid.metadata, {{"gamma_a", format_double(u.gamma_a)},
                         {"gamma_phi", format_double(gphi)},
                         {"state", a.state},
                         {"n0", format_double(n0)},
                         {"g2_0", format_double(g2_0)}});
  emit(g, format_grid(grid));
  return kOk;
}

CondensateParams condensate_params(const CondensateArgs& a, const Units& u) {
  CondensateParams p;
  p.gamma_b = u.freq(a.gamma_b.value_or(u.gamma_a));
  p.P_b = u.freq(a.P_b.value_or(u.gamma_a));
  p.P_ba = u.freq(a.P_ba.value_or(10.0 * u.gamma_a));
  p.validate();
  return p;
}

Metadata condensate_metadata(const CondensateParams& p, const Units& u, double epsilon) {
  return {{"gamma_a", format_double(u.gamma_a)},
          {"gamma_b", format_double(p.gamma_b * u.gamma_a)},
          {"P_b", format_double(p.P_b * u.gamma_a)},
          {"P_ba", format_double(p.P_ba * u.gamma_a)},
          {"epsilon", format_double(epsilon)}};
}

int run_cond2ps(const Global& g, const CondensateArgs& a) {
  const Units u = resolve_units(g, a.grid);
  const CondensateParams p = condensate_params(a, u);
  const double Gamma = a.grid.Gamma.value_or(0.5 * u.gamma_a);
  const auto axis = grid_axis(a.grid, u, -1.0, 1.0);
  std::vector<double> nat(axis.size());
  for (std::size_t i = 0; i < axis.size(); ++i) nat[i] = u.freq(axis[i]);
  Condensate2psOptions o;
  o.threads = g.threads;
  o.sensor.epsilon = a.epsilon;
  SpectrumGrid grid = condensate_2ps(p, u.freq(Gamma), nat, nat, o);
  const std::string truncation = grid.meta("truncation");
  grid.omega1_axis = grid.omega2_axis = axis;
  grid.Gamma = Gamma;
  grid.metadata = provenance("cond2ps", g, u);
  append(grid.metadata, condensate_metadata(p, u, a.epsilon));
  grid.metadata.emplace_back("truncation", truncation);
  emit(g, format_grid(grid));
  return kOk;
}

int run_g2tau(const Global& g, const G2tauArgs& a) {
  const Units u = resolve_units(g, a.cond.grid);
  const CondensateParams p = condensate_params(a.cond, u);
  const double Gamma = a.cond.grid.Gamma.value_or(0.5 * u.gamma_a);
  const double tau_max = a.tau_max.value_or(u.physical ? 20.0 / energy_to_rate(u.gamma_a) : 20.0);
  if (!(tau_max > 0.0) || a.tau_points < 2) throw ValidationError("tau axis needs tau_max > 0 and at least 2 points");

  const CondensateState state = condensate_steady_state(p);
  double w1 = u.freq(a.omega1), w2 = u.freq(a.omega2), half_width = 0.0;
  if (a.probe != "point") {
    const auto probes = condensate_probes(state);
    half_width = probes.half_width;
    const auto it = std::find_if(probes.points.begin(), probes.points.end(),
                                 [&](const ProbePoint& q) { return q.name == a.probe; });
    if (it == probes.points.end())
      throw ValidationError("unknown probe '" + a.probe + "' (diagonal, horizontal, antidiagonal or point)");
    w1 = it->omega1;
    w2 = it->omega2;
  }
  Trace trace;
  trace.tau = linspace(0.0, tau_max, a.tau_points);
  std::vector<double> taus(trace.tau.size());
  for (std::size_t k = 0; k < taus.size(); ++k) taus[k] = u.time(trace.tau[k]);
  SensorOptions so;
  so.epsilon = a.cond.epsilon;
  trace.values = filtered_g2_tau(state.model, 0, FilterParams::equal(w1, w2, u.freq(Gamma)), taus, so);
  trace.metadata = provenance("g2tau", g, u);
  append(trace.metadata, condensate_metadata(p, u, a.cond.epsilon));
  append(trace.metadata, {{"Gamma", format_double(Gamma)},
                          {"probe", a.probe},
                          {"omega1", format_double(w1 * u.gamma_a)},
                          {"omega2", format_double(w2 * u.gamma_a)},
                          {"half_width", format_double(half_width * u.gamma_a)},
                          {"time_unit", u.time_unit()}});
  emit(g, format_trace(trace));
  return kOk;
}

int run_stream(const Global& g, StreamArgs a) {
  a.emitter.kind = parse_emitter_kind(a.kind);
  SimulationOptions o;
  o.threads = g.threads;
  o.step = a.step;
  const FrameSet fs = simulate_frames(a.emitter, a.detector, a.frames, g.seed, o);
  Metadata extra{{"program", "twophoton"}, {"version", kVersion}, {"command", "stream"}};
  if (a.step > 0.0) extra.emplace_back("step", format_double(a.step));
  emit(g, format_frames(fs, extra));
  std::cerr << fs.frames.size() << " frames, " << fs.total_clicks() << " clicks (" << format_double(fs.mean_clicks())
            << " per frame)\n";
  return kOk;
}

int run_correlate(const Global& g, const CorrelateArgs& a) {
  if (a.input.empty()) throw ValidationError("correlate needs --input");
  const FrameSet fs = read_frames(a.input);
  const auto& d = fs.detector;
  // Natural units rescale energies by hbar * gamma_a of the recorded emitter.
  Units u;
  u.physical = g.units != "natural";
  const double scale = u.physical ? 1.0 : 1.0 / rate_to_energy(fs.emitter.gamma_a);
  Metadata meta = provenance("correlate", g, u);
  meta.emplace_back("input", a.input);
  for (const auto& [k, v] : frame_metadata(fs))
    if (k != "format") meta.emplace_back("source." + k, v);

  if (!a.trace) {
    SpectrumGrid grid = scan_2ps(fs, a.window_width.value_or(d.pixel_step_energy), a.tau_window.value_or(d.time_resolution));
    for (auto* axis : {&grid.omega1_axis, &grid.omega2_axis})
      for (double& x : *axis) x *= scale;
    grid.Gamma *= scale;
    append(meta, grid.metadata);
    grid.metadata = meta;
    emit(g, format_grid(grid));
    return kOk;
  }
  const EnergyWindow full = full_window(d);
  const EnergyWindow w1{a.window1_lo.value_or(full.lo), a.window1_hi.value_or(full.hi)};
  const EnergyWindow w2{a.window2_lo.value_or(full.lo), a.window2_hi.value_or(full.hi)};
  CorrelationOptions o;
  o.bootstrap = a.bootstrap;
  o.bootstrap_seed = g.seed;
  const auto c = correlate_clicks(fs, w1, w2, uniform_tau_bins(0.0, a.tau_max, a.tau_bins), o);
  Trace trace;
  std::string errors;
  for (std::size_t b = 0; b < c.bins.size(); ++b) {
    trace.tau.push_back(0.5 * (c.bins[b].lo + c.bins[b].hi));
    trace.values.push_back(c.g2[b]);
    if (b) errors += ';';
    errors += format_double(c.standard_error[b]);
  }
  append(meta, {{"window1", format_double(w1.lo) + "," + format_double(w1.hi)},
                {"window2", format_double(w2.lo) + "," + format_double(w2.hi)},
                {"tau_bin_width", format_double(a.tau_max / double(a.tau_bins))},
                {"bootstrap", std::to_string(a.bootstrap)},
                {"time_unit", "ps"}});
  if (a.bootstrap > 1) meta.emplace_back("standard_error", errors);
  trace.metadata = meta;
  emit(g, format_trace(trace));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-resolved two-photon correlations: analytic maps, sensor-method spectra, "
               "condensate spectra and streak-camera emulation"};
  app.fallthrough();
  app.require_subcommand(1);
  Global g;
  app.add_option("--config", g.config, "JSON file with one command block");
  app.add_option("-o,--output", g.output, "Output file (stdout when omitted)");
  app.add_option("--units", g.units, "natural (gamma_a = 1) or physical (ueV, ps)")
      ->check(CLI::IsMember({"natural", "physical"}))
      ->capture_default_str();
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.set_version_flag("--version", std::string(kVersion));

  FormFactorArgs ff;
  auto* c_ff = app.add_subcommand("formfactor", "Analytic boson form factor over a frequency grid");
  add_grid_options(c_ff, ff.grid, 61);
  c_ff->add_option("--gamma_phi", ff.gamma_phi, "Pure dephasing rate (default gamma_a)");

  Spont2psArgs sp;
  auto* c_sp = app.add_subcommand("spont2ps", "Two-photon spectrum of spontaneous emission by the sensor method");
  add_grid_options(c_sp, sp.grid, 61);
  c_sp->add_option("--gamma_phi", sp.gamma_phi, "Pure dephasing rate (default gamma_a)");
  c_sp->add_option("--state", sp.state, "Initial state: thermal, coherent or fock")->capture_default_str();
  c_sp->add_option("--n0", sp.n0, "Mean photon number of thermal and coherent states")->capture_default_str();
  c_sp->add_option("--n", sp.n, "Photon number of the Fock state")->capture_default_str();

  CondensateArgs cd;
  auto* c_cd = app.add_subcommand("cond2ps", "Two-photon spectrum of the driven condensate");
  add_condensate_options(c_cd, cd, 21);

  G2tauArgs gt;
  auto* c_gt = app.add_subcommand("g2tau", "Filtered g2(tau) of the condensate at one frequency pair");
  add_condensate_options(c_gt, gt.cond, 21);
  c_gt->add_option("--probe", gt.probe, "diagonal, horizontal, antidiagonal or point")->capture_default_str();
  c_gt->add_option("--omega1", gt.omega1, "First filter frequency for --probe point");
  c_gt->add_option("--omega2", gt.omega2, "Second filter frequency for --probe point");
  c_gt->add_option("--tau_max", gt.tau_max, "Largest delay (default 20/gamma_a)");
  c_gt->add_option("--tau_points", gt.tau_points, "Delays on the trace")->capture_default_str();

  StreamArgs st;
  auto* c_st = app.add_subcommand("stream", "Simulate streak-camera frames (rates in 1/ps, energies in ueV)");
  c_st->add_option("--emitter", st.kind, "coherent, thermal or mixture")->capture_default_str();
  c_st->add_option("--n0", st.emitter.n0, "Mean photons emitted per frame")->capture_default_str();
  c_st->add_option("--gamma_a", st.emitter.gamma_a, "Emitter decay rate (1/ps)")->capture_default_str();
  c_st->add_option("--gamma_phi", st.emitter.gamma_phi, "Emitter dephasing rate (1/ps)")->capture_default_str();
  c_st->add_option("--thermal_weight", st.emitter.thermal_weight, "Thermal share of a mixture")->capture_default_str();
  c_st->add_option("--frames", st.frames, "Number of frames")->capture_default_str();
  c_st->add_option("--step", st.step, "Field integration step in ps (0 = automatic)")->capture_default_str();
  c_st->add_option("--time_resolution", st.detector.time_resolution, "ps")->capture_default_str();
  c_st->add_option("--energy_resolution", st.detector.energy_resolution, "ueV")->capture_default_str();
  c_st->add_option("--frame_span_time", st.detector.frame_span_time, "ps")->capture_default_str();
  c_st->add_option("--frame_span_energy", st.detector.frame_span_energy, "ueV")->capture_default_str();
  c_st->add_option("--pixel_step_energy", st.detector.pixel_step_energy, "ueV")->capture_default_str();
  c_st->add_option("--efficiency", st.detector.efficiency, "Detection efficiency")->capture_default_str();

  CorrelateArgs co;
  auto* c_co = app.add_subcommand("correlate", "Correlate clicks of a frame file (energies in ueV, times in ps)");
  c_co->add_option("--input", co.input, "Frame file written by stream");
  c_co->add_option("--window_width", co.window_width, "Window width for the 2PS scan (default one pixel)");
  c_co->add_option("--tau_window", co.tau_window, "Largest |tau| counted in the scan (default one time bin)");
  c_co->add_flag("--trace", co.trace, "Write g2(tau) between two windows instead of a 2PS map");
  c_co->add_option("--window1_lo", co.window1_lo, "Lower edge of window 1 (default full span)");
  c_co->add_option("--window1_hi", co.window1_hi, "Upper edge of window 1");
  c_co->add_option("--window2_lo", co.window2_lo, "Lower edge of window 2 (default full span)");
  c_co->add_option("--window2_hi", co.window2_hi, "Upper edge of window 2");
  c_co->add_option("--tau_max", co.tau_max, "Largest |tau| on the trace (ps)")->capture_default_str();
  c_co->add_option("--tau_bins", co.tau_bins, "Number of tau bins")->capture_default_str();
  c_co->add_option("--bootstrap", co.bootstrap, "Frame-bootstrap resamples for standard errors")->capture_default_str();

  try {
    // A config file may name the command on its own.
    std::vector<std::string> args(argv + 1, argv + argc);
    json cfg;
    for (std::size_t i = 0; i < args.size(); ++i) {
      std::string path;
      if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
      if (path.empty()) continue;
      cfg = load_config(path);
      const std::string command = config_command(cfg);
      const auto given = std::find_first_of(args.begin(), args.end(), kCommands.begin(), kCommands.end());
      if (given == args.end()) args.push_back(command);
      else if (*given != command)
        throw ValidationError("config is for '" + command + "' but the command line asks for '" + *given + "'");
      break;
    }
    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? kOk : kConfig;
    }
    CLI::App* sub = app.get_subcommands().front();
    if (!cfg.is_null()) {
      apply_global(cfg, app);
      if (cfg.contains(sub->get_name())) apply_block(sub, cfg.at(sub->get_name()));
    }
    if (g.units != "natural" && g.units != "physical") throw ValidationError("units must be natural or physical");

    const std::string name = sub->get_name();
    if (name == "formfactor") return run_formfactor(g, ff);
    if (name == "spont2ps") return run_spont2ps(g, sp);
    if (name == "cond2ps") return run_cond2ps(g, cd);
    if (name == "g2tau") return run_g2tau(g, gt);
    if (name == "stream") return run_stream(g, st);
    return run_correlate(g, co);
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const InsufficientStatisticsError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kStatistics;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumerical;
  } catch (const json::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
