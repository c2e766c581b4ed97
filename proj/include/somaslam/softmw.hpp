#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <utility>

#include "somaslam/error_models.hpp"
#include "somaslam/graph.hpp"

namespace somaslam {

struct SoftMwParams {
  double epsilon = 0.12;            // snap tolerance, must stay below pi/4
  double proximity_threshold = 1.0; // meters
  int temporal_window = 30;         // creation-id window n
  double min_length = 1.0;          // significance: length threshold
  int min_support = 3;              // significance: pose-landmark edge count
  int saturation_cap = 3;           // max LL edges per landmark pair

  void validate() const {
    if (epsilon <= 0.0 || epsilon >= kPi / 4.0) {
      throw std::invalid_argument("softmw: epsilon must be in (0, pi/4)");
    }
    if (proximity_threshold <= 0.0 || temporal_window <= 0 || min_length <= 0.0 ||
        min_support <= 0 || saturation_cap <= 0) {
      throw std::invalid_argument("softmw: parameters must be strictly positive");
    }
  }
};

/// Counts LL edges created per unordered landmark pair (criterion 3).
class PairSaturationLedger {
 public:
  int count(NodeId a, NodeId b) const {
    const auto it = counts_.find(key(a, b));
    return it == counts_.end() ? 0 : it->second;
  }
  void increment(NodeId a, NodeId b) { ++counts_[key(a, b)]; }
  size_t pair_count() const { return counts_.size(); }

 private:
  static std::pair<NodeId, NodeId> key(NodeId a, NodeId b) {
    return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
  }
  std::map<std::pair<NodeId, NodeId>, int> counts_;
};

/// The four endpoint-to-segment distances between two landmarks.
inline std::array<double, 4> segment_pair_distances(const LineLandmark& l1,
                                                    const LineLandmark& l2) {
  if ((l1.endpoints[1] - l1.endpoints[0]).norm() == 0.0 ||
      (l2.endpoints[1] - l2.endpoints[0]).norm() == 0.0) {
    throw std::invalid_argument("segment_pair_distances: degenerate zero-length segment");
  }
  return {point_segment_distance(l1.endpoints[0], l2.endpoints[0], l2.endpoints[1]),
          point_segment_distance(l1.endpoints[1], l2.endpoints[0], l2.endpoints[1]),
          point_segment_distance(l2.endpoints[0], l1.endpoints[0], l1.endpoints[1]),
          point_segment_distance(l2.endpoints[1], l1.endpoints[0], l1.endpoints[1])};
}

/// Criterion 1, spatial half: the segments intersect or at least one of the
/// four distances falls below the proximity threshold.
inline bool is_spatially_local(const LineLandmark& l1, const LineLandmark& l2,
                               const SoftMwParams& params) {
  if (segments_intersect(l1.endpoints[0], l1.endpoints[1], l2.endpoints[0], l2.endpoints[1])) {
    return true;
  }
  const auto d = segment_pair_distances(l1, l2);
  return *std::min_element(d.begin(), d.end()) < params.proximity_threshold;
}

/// Criterion 1, temporal half: 0 < ID_2 - ID_1 < n, where l2 is the landmark
/// associated with the current segment.
inline bool is_temporally_local(const LineLandmark& l1, const LineLandmark& l2, int n) {
  const NodeId diff = l2.id - l1.id;
  return diff > 0 && diff < n;
}

/// Criterion 2: long enough and supported by enough pose-landmark edges.
inline bool is_significant(const LineLandmark& l, const SoftMwParams& params) {
  return l.length > params.min_length && l.support >= params.min_support;
}

/// The ideal Manhattan-world relative orientation: the multiple (k/2)*pi,
/// |k| <= 2, nearest to the wrapped orientation difference, if within
/// epsilon; none otherwise. epsilon < pi/4 guarantees a unique candidate.
inline std::optional<double> ideal_delta_theta(double theta1, double theta2, double epsilon) {
  const double d = wrap_angle(theta2 - theta1);
  double best = std::numeric_limits<double>::infinity();
  double best_target = 0.0;
  for (int k = -2; k <= 2; ++k) {
    const double target = static_cast<double>(k) / 2.0 * kPi;
    const double err = std::abs(d - target);
    if (err < best) {
      best = err;
      best_target = target;
    }
  }
  if (best < epsilon) return best_target;
  return std::nullopt;
}

/// Algorithm step: tests all three criteria plus the ideal-angle snap and, on
/// success, creates the soft constraint and updates the saturation ledger.
/// l1 ranges over existing landmarks, l2 is the currently associated one.
inline std::optional<LandmarkLandmarkEdge> try_create_ll_edge(const LineLandmark& l1,
                                                              const LineLandmark& l2,
                                                              PairSaturationLedger& ledger,
                                                              const SoftMwParams& params) {
  if (!is_temporally_local(l1, l2, params.temporal_window)) return std::nullopt;
  if (!is_significant(l1, params) || !is_significant(l2, params)) return std::nullopt;
  if (!is_spatially_local(l1, l2, params)) return std::nullopt;
  if (ledger.count(l1.id, l2.id) >= params.saturation_cap) return std::nullopt;

  const auto ideal = ideal_delta_theta(l1.line.theta, l2.line.theta, params.epsilon);
  if (!ideal) return std::nullopt;

  LandmarkLandmarkEdge edge;
  edge.landmark1_id = l1.id;
  edge.landmark2_id = l2.id;
  edge.delta_theta_ideal = *ideal;
  edge.weight = l1.length + l2.length;
  ledger.increment(l1.id, l2.id);
  return edge;
}

}  // namespace somaslam
