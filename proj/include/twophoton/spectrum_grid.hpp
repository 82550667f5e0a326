#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "twophoton/errors.hpp"

namespace twophoton {

using Metadata = std::vector<std::pair<std::string, std::string>>;

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc()) throw Error("cannot format number");
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (n == 0) throw ValidationError("axis needs at least one point");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = n == 1 ? lo : lo + (hi - lo) * double(i) / double(n - 1);
  return out;
}

// Writes to a sibling temporary file and renames it over the target.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  std::random_device rd;
  auto tmp = path;
  tmp += ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error("write to " + tmp.string() + " failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot move output into place at " + path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// values(i, j) belongs to (omega1_axis[i], omega2_axis[j]).
struct SpectrumGrid {
  std::vector<double> omega1_axis;
  std::vector<double> omega2_axis;
  Eigen::MatrixXd values;
  double Gamma = 0.0;
  double tau = 0.0;
  Metadata metadata;

  static SpectrumGrid make(std::vector<double> ax1, std::vector<double> ax2, double Gamma) {
    SpectrumGrid g;
    g.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ax1.size()), static_cast<Eigen::Index>(ax2.size()));
    g.omega1_axis = std::move(ax1);
    g.omega2_axis = std::move(ax2);
    g.Gamma = Gamma;
    return g;
  }

  void validate() const {
    auto increasing = [](const std::vector<double>& a) {
      for (std::size_t i = 1; i < a.size(); ++i)
        if (!(a[i] > a[i - 1])) return false;
      return !a.empty();
    };
    if (!increasing(omega1_axis) || !increasing(omega2_axis))
      throw ValidationError("grid axes must be non-empty and strictly increasing");
    if (values.rows() != Eigen::Index(omega1_axis.size()) || values.cols() != Eigen::Index(omega2_axis.size()))
      throw ValidationError("grid values do not match the axes");
    if (!values.allFinite()) throw NumericalError("grid contains non-finite values");
  }

  std::string meta(const std::string& key) const {
    for (const auto& [k, v] : metadata)
      if (k == key) return v;
    return {};
  }
};

struct Trace {
  std::vector<double> tau;
  std::vector<double> values;
  Metadata metadata;
};

namespace detail {

inline void write_header(std::ostringstream& out, const Metadata& meta) {
  for (const auto& [k, v] : meta) out << "# " << k << ": " << v << '\n';
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = s.find(sep, pos);
    out.push_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

// Header entries and data rows of a self-describing text file.
inline std::pair<Metadata, std::vector<std::vector<double>>> parse_table(const std::string& text, std::size_t columns) {
  Metadata meta;
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto colon = line.find(": ");
      if (colon != std::string::npos && line.size() > 2)
        meta.emplace_back(line.substr(2, colon - 2), line.substr(colon + 2));
      continue;
    }
    if (!header_seen && line.find_first_of("0123456789") != 0 && line[0] != '-' && line[0] != '.') {
      header_seen = true;
      continue;
    }
    const auto fields = split(line, ',');
    if (fields.size() != columns) throw ValidationError("expected " + std::to_string(columns) + " columns: " + line);
    std::vector<double> row;
    for (auto f : fields) row.push_back(parse_double(f));
    rows.push_back(std::move(row));
  }
  return {std::move(meta), std::move(rows)};
}

}  // namespace detail

inline std::string format_grid(const SpectrumGrid& g) {
  g.validate();
  std::ostringstream out;
  Metadata meta = g.metadata;
  meta.emplace_back("Gamma", format_double(g.Gamma));
  meta.emplace_back("tau", format_double(g.tau));
  meta.emplace_back("shape", std::to_string(g.omega1_axis.size()) + "x" + std::to_string(g.omega2_axis.size()));
  detail::write_header(out, meta);
  out << "omega1,omega2,value\n";
  for (std::size_t i = 0; i < g.omega1_axis.size(); ++i)
    for (std::size_t j = 0; j < g.omega2_axis.size(); ++j)
      out << format_double(g.omega1_axis[i]) << ',' << format_double(g.omega2_axis[j]) << ','
          << format_double(g.values(Eigen::Index(i), Eigen::Index(j))) << '\n';
  return out.str();
}

inline void write_grid(const std::filesystem::path& path, const SpectrumGrid& g) { atomic_write(path, format_grid(g)); }

inline SpectrumGrid parse_grid(const std::string& text) {
  auto [meta, rows] = detail::parse_table(text, 3);
  if (rows.empty()) throw ValidationError("grid file has no rows");
  std::vector<double> ax1, ax2;
  for (const auto& r : rows) {
    if (ax1.empty() || r[0] != ax1.back()) ax1.push_back(r[0]);
    if (ax1.size() == 1) ax2.push_back(r[1]);
  }
  if (rows.size() != ax1.size() * ax2.size()) throw ValidationError("grid rows do not form a rectangle");
  SpectrumGrid g = SpectrumGrid::make(ax1, ax2, 0.0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = k / ax2.size(), j = k % ax2.size();
    if (rows[k][0] != ax1[i] || rows[k][1] != ax2[j]) throw ValidationError("grid rows are not in row-major order");
    g.values(Eigen::Index(i), Eigen::Index(j)) = rows[k][2];
  }
  for (auto& [k, v] : meta) {
    if (k == "Gamma") g.Gamma = parse_double(v);
    else if (k == "tau") g.tau = parse_double(v);
    else if (k != "shape") g.metadata.emplace_back(k, v);
  }
  g.validate();
  return g;
}

inline SpectrumGrid read_grid(const std::filesystem::path& path) { return parse_grid(read_file(path)); }

inline std::string format_trace(const Trace& t) {
  if (t.tau.size() != t.values.size()) throw ValidationError("trace axes differ in length");
  std::ostringstream out;
  detail::write_header(out, t.metadata);
  out << "tau,value\n";
  for (std::size_t k = 0; k < t.tau.size(); ++k) out << format_double(t.tau[k]) << ',' << format_double(t.values[k]) << '\n';
  return out.str();
}

inline void write_trace(const std::filesystem::path& path, const Trace& t) { atomic_write(path, format_trace(t)); }

inline Trace parse_trace(const std::string& text) {
  auto [meta, rows] = detail::parse_table(text, 2);
  Trace t;
  t.metadata = std::move(meta);
  for (const auto& r : rows) {
    t.tau.push_back(r[0]);
    t.values.push_back(r[1]);
  }
  return t;
}

inline Trace read_trace(const std::filesystem::path& path) { return parse_trace(read_file(path)); }

}  // namespace twophoton
