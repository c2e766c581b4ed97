#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "somaslam/geometry.hpp"

namespace somaslam {

/// Laser geometry used when a log message does not embed its own.
/// Radish-era defaults: 180 degree field of view, first beam at -pi/2,
/// readings at or beyond max_range are invalid.
struct LaserGeometry {
  double start_angle = -kPi / 2.0;
  double fov = kPi;
  double max_range = 10.0;
  bool use_laser_pose = false;  // consume laser-corrected pose instead of raw odometry
};

struct RawScan {
  std::vector<double> ranges;
  Pose2 laser_pose;
  Pose2 odom_pose;
  double timestamp = 0.0;
  std::string host;
  double logger_timestamp = 0.0;
  // Embedded geometry (ROBOTLASER1 messages carry their own).
  bool has_geometry = false;
  double start_angle = 0.0;
  double fov = 0.0;
  double max_range = 0.0;
};

struct OdometryEntry {
  Pose2 pose;
  double timestamp = 0.0;
};

struct CarmenLog {
  std::vector<RawScan> scans;
  std::vector<OdometryEntry> odometry;
};

struct Beam {
  double bearing = 0.0;  // sensor frame, radians
  double range = 0.0;    // meters
  bool valid = true;
};

struct SparseScan {
  std::vector<Beam> beams;  // bearings strictly increasing
  Pose2 odom_pose;
  double timestamp = 0.0;
};

struct GroundTruthRelation {
  double t1 = 0.0;
  double t2 = 0.0;
  Pose2 relative_pose;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  size_t line() const { return line_; }

 private:
  size_t line_;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline double to_double(const std::string& tok, const std::string& path, size_t line_no) {
  double v = 0.0;
  const char* begin = tok.data();
  const char* end = begin + tok.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end) {
    throw ParseError(path, line_no, "malformed numeric field '" + tok + "'");
  }
  return v;
}

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Parses a CARMEN log. FLASER/ROBOTLASER1 messages yield scans, ODOM
/// messages yield odometry entries; unknown message types are skipped.
inline CarmenLog parse_carmen_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open carmen log: " + path);

  CarmenLog log;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;

    auto num = [&](size_t i) { return detail::to_double(tok.at(i), path, line_no); };
    auto need = [&](size_t n) {
      if (tok.size() < n) throw ParseError(path, line_no, "truncated " + tok[0] + " message");
    };

    if (tok[0] == "FLASER") {
      need(2);
      const size_t n = static_cast<size_t>(num(1));
      need(2 + n + 9);
      RawScan s;
      s.ranges.reserve(n);
      for (size_t i = 0; i < n; ++i) s.ranges.push_back(num(2 + i));
      const size_t b = 2 + n;
      s.laser_pose = Pose2(num(b), num(b + 1), num(b + 2));
      s.odom_pose = Pose2(num(b + 3), num(b + 4), num(b + 5));
      s.timestamp = num(b + 6);
      s.host = tok[b + 7];
      s.logger_timestamp = num(b + 8);
      log.scans.push_back(std::move(s));
    } else if (tok[0] == "ROBOTLASER1") {
      need(9);
      const size_t n = static_cast<size_t>(num(8));
      need(9 + n + 1);
      const size_t nrem = static_cast<size_t>(num(9 + n));
      need(9 + n + 1 + nrem + 14);
      RawScan s;
      s.has_geometry = true;
      s.start_angle = num(2);
      s.fov = num(3);
      s.max_range = num(5);
      s.ranges.reserve(n);
      for (size_t i = 0; i < n; ++i) s.ranges.push_back(num(9 + i));
      const size_t b = 9 + n + 1 + nrem;
      s.laser_pose = Pose2(num(b), num(b + 1), num(b + 2));
      s.odom_pose = Pose2(num(b + 3), num(b + 4), num(b + 5));
      s.timestamp = num(b + 11);
      s.host = tok[b + 12];
      s.logger_timestamp = num(b + 13);
      log.scans.push_back(std::move(s));
    } else if (tok[0] == "ODOM") {
      need(10);
      OdometryEntry o;
      o.pose = Pose2(num(1), num(2), num(3));
      o.timestamp = num(7);
      log.odometry.push_back(o);
    }
    // anything else: skipped
  }
  return log;
}

/// Serializes a log back to CARMEN text, full float precision. Scans with
/// embedded geometry are emitted as ROBOTLASER1 (untracked fields zeroed),
/// the rest as FLASER.
inline void write_carmen_log(const CarmenLog& log, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write carmen log: " + path);
  using detail::fmt_double;

  for (const auto& s : log.scans) {
    std::ostringstream ss;
    if (s.has_geometry) {
      ss << "ROBOTLASER1 0 " << fmt_double(s.start_angle) << ' ' << fmt_double(s.fov) << ' '
         << fmt_double(s.ranges.size() > 1 ? s.fov / static_cast<double>(s.ranges.size() - 1) : 0.0)
         << ' ' << fmt_double(s.max_range) << " 0 0 " << s.ranges.size();
      for (double r : s.ranges) ss << ' ' << fmt_double(r);
      ss << " 0";  // no remissions
    } else {
      ss << "FLASER " << s.ranges.size();
      for (double r : s.ranges) ss << ' ' << fmt_double(r);
    }
    ss << ' ' << fmt_double(s.laser_pose.x) << ' ' << fmt_double(s.laser_pose.y) << ' '
       << fmt_double(s.laser_pose.theta) << ' ' << fmt_double(s.odom_pose.x) << ' '
       << fmt_double(s.odom_pose.y) << ' ' << fmt_double(s.odom_pose.theta);
    if (s.has_geometry) ss << " 0 0 0 0 0";  // tv rv safety dists, turn axis
    ss << ' ' << fmt_double(s.timestamp) << ' ' << (s.host.empty() ? "somaslam" : s.host) << ' '
       << fmt_double(s.logger_timestamp) << '\n';
    out << ss.str();
  }
  for (const auto& o : log.odometry) {
    out << "ODOM " << fmt_double(o.pose.x) << ' ' << fmt_double(o.pose.y) << ' '
        << fmt_double(o.pose.theta) << " 0 0 0 " << fmt_double(o.timestamp) << " somaslam "
        << fmt_double(o.timestamp) << '\n';
  }
}

/// Uniformly subsamples k of the scan's N beams, endpoints inclusive:
/// index_i = round(i * (N-1) / (k-1)). Readings at or beyond max_range are
/// kept in position but flagged invalid.
inline SparseScan subsample_beams(const RawScan& scan, int k, const LaserGeometry& geom = {}) {
  const int n = static_cast<int>(scan.ranges.size());
  if (k < 1 || k > n) {
    throw std::invalid_argument("subsample_beams: k out of range [1, " + std::to_string(n) + "]");
  }
  const double start = scan.has_geometry ? scan.start_angle : geom.start_angle;
  const double fov = scan.has_geometry ? scan.fov : geom.fov;
  const double max_range = scan.has_geometry ? scan.max_range : geom.max_range;
  const double step = n > 1 ? fov / static_cast<double>(n - 1) : 0.0;

  SparseScan out;
  out.odom_pose = geom.use_laser_pose ? scan.laser_pose : scan.odom_pose;
  out.timestamp = scan.timestamp;
  out.beams.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    const long idx = k > 1 ? std::lround(static_cast<double>(i) * (n - 1) / (k - 1)) : 0;
    Beam b;
    b.bearing = start + static_cast<double>(idx) * step;
    b.range = scan.ranges[static_cast<size_t>(idx)];
    b.valid = b.range < max_range;
    out.beams.push_back(b);
  }
  return out;
}

/// Parses a ground-truth relations file: rows of
/// "t1 t2 dx dy dz droll dpitch dyaw"; the 2D projection keeps (dx, dy, dyaw).
inline std::vector<GroundTruthRelation> parse_relations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open relations file: " + path);

  std::vector<GroundTruthRelation> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tok = detail::split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() != 8) {
      throw ParseError(path, line_no,
                       "expected 8 columns, got " + std::to_string(tok.size()));
    }
    GroundTruthRelation r;
    r.t1 = detail::to_double(tok[0], path, line_no);
    r.t2 = detail::to_double(tok[1], path, line_no);
    r.relative_pose = Pose2(detail::to_double(tok[2], path, line_no),
                            detail::to_double(tok[3], path, line_no),
                            detail::to_double(tok[7], path, line_no));
    out.push_back(r);
  }
  return out;
}

inline void write_relations(const std::vector<GroundTruthRelation>& relations,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write relations file: " + path);
  using detail::fmt_double;
  for (const auto& r : relations) {
    out << fmt_double(r.t1) << ' ' << fmt_double(r.t2) << ' ' << fmt_double(r.relative_pose.x)
        << ' ' << fmt_double(r.relative_pose.y) << " 0 0 0 "
        << fmt_double(r.relative_pose.theta) << '\n';
  }
}

/// Parses the 4-beam CSV format: header "t,x,y,theta,front,left,back,right",
/// ranges in meters, empty field = no reading. Beams are emitted in bearing
/// order right (-pi/2), front (0), left (pi/2), back (pi).
inline std::vector<SparseScan> parse_sparse_csv(const std::string& path, double max_range = 4.0) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open sparse csv: " + path);

  auto split_csv = [](const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        out.push_back(cur);
        cur.clear();
      } else if (c != '\r') {
        cur += c;
      }
    }
    out.push_back(cur);
    return out;
  };
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t");
    const auto e = s.find_last_not_of(" \t");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };

  std::string line;
  size_t line_no = 0;
  if (!std::getline(in, line)) return {};
  ++line_no;
  {
    auto cols = split_csv(line);
    const char* expected[] = {"t", "x", "y", "theta", "front", "left", "back", "right"};
    bool ok = cols.size() == 8;
    for (size_t i = 0; ok && i < 8; ++i) ok = trim(cols[i]) == expected[i];
    if (!ok) throw ParseError(path, line_no, "missing or malformed header (expected t,x,y,theta,front,left,back,right)");
  }

  std::vector<SparseScan> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cols = split_csv(line);
    if (cols.size() != 8) {
      throw ParseError(path, line_no, "expected 8 columns, got " + std::to_string(cols.size()));
    }
    SparseScan s;
    s.timestamp = detail::to_double(trim(cols[0]), path, line_no);
    s.odom_pose = Pose2(detail::to_double(trim(cols[1]), path, line_no),
                        detail::to_double(trim(cols[2]), path, line_no),
                        detail::to_double(trim(cols[3]), path, line_no));
    // column index and bearing, in strictly increasing bearing order
    const std::pair<size_t, double> layout[] = {
        {7, -kPi / 2.0}, {4, 0.0}, {5, kPi / 2.0}, {6, kPi}};
    for (auto [col, bearing] : layout) {
      Beam b;
      b.bearing = bearing;
      const std::string field = trim(cols[col]);
      if (field.empty()) {
        b.valid = false;
      } else {
        b.range = detail::to_double(field, path, line_no);
        b.valid = b.range < max_range;
      }
      s.beams.push_back(b);
    }
    if (!out.empty() && s.timestamp <= out.back().timestamp) {
      throw ParseError(path, line_no, "non-monotone timestamp " + detail::fmt_double(s.timestamp));
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace somaslam
