#pragma once

#include <array>
#include <string>
#include <vector>

namespace rampmeter {

enum class RouteId : int { North = 0, West = 1 };

inline constexpr std::array<RouteId, 2> kRoutes{RouteId::North, RouteId::West};

inline constexpr int route_index(RouteId r) { return static_cast<int>(r); }
const char* route_name(RouteId r);
RouteId route_from_name(const std::string& name);

struct Segment {
  std::string name;
  double length = 0.0;
  std::vector<int> successors;
  bool roundabout = false;
};

struct Route {
  RouteId id = RouteId::West;
  std::vector<int> segments;
  double total_length = 0.0;
};

// Scalar geometry knobs; the default segment layout is derived from these.
struct GeometrySpec {
  double frame_length = 443.0;
  double north_entry = 74.3;
  double west_entry = 86.6;
  double circumference = 80.0;
};

// Explicit topology, as read from a run config.
struct NetworkDescription {
  struct SegmentDesc {
    std::string name;
    double length = 0.0;
    std::vector<std::string> successors;
    bool roundabout = false;
  };
  std::vector<SegmentDesc> segments;
  std::vector<std::string> north_route;
  std::vector<std::string> west_route;

  static NetworkDescription from_geometry(const GeometrySpec& g);
};

// Single-lane roundabout with a north and a west entry, modelled as two 1D
// routes over shared segments. The west route defines the absolute frame;
// north-only segments are placed so that they end where the shared part of
// the north route begins. Immutable once built.
class RoadNetwork {
 public:
  explicit RoadNetwork(const NetworkDescription& desc);
  static RoadNetwork from_geometry(const GeometrySpec& g) {
    return RoadNetwork(NetworkDescription::from_geometry(g));
  }

  // Copy with every segment length multiplied by `factor`.
  RoadNetwork scaled(double factor) const;

  double position_1d(RouteId r, double progress) const;

  // Distance along the entry to the first roundabout segment. Returns 0 and
  // sets *inside when the vehicle is already past the entry.
  double distance_to_roundabout(RouteId r, double progress, bool* inside = nullptr) const;
  bool on_roundabout(RouteId r, double progress) const;

  // Index into route(r).segments of the segment holding `progress`.
  int segment_at(RouteId r, double progress) const;
  int segment_id_at(RouteId r, double progress) const;

  const Route& route(RouteId r) const { return routes_[route_index(r)]; }
  const Segment& segment(int id) const { return segments_[id]; }
  const std::vector<Segment>& segments() const { return segments_; }
  bool route_uses(RouteId r, int segment_id) const;
  // Frame coordinate of the start of a segment.
  double segment_offset(int segment_id) const { return offsets_[segment_id]; }

  double entry_length(RouteId r) const { return entry_length_[route_index(r)]; }
  double frame_length() const { return routes_[route_index(RouteId::West)].total_length; }
  // Frame coordinate at which the north route joins the west route.
  double merge_point() const { return merge_point_; }
  // Segment id of the first segment shared by both routes.
  int merge_segment() const { return merge_segment_; }
  const NetworkDescription& description() const { return desc_; }

 private:
  void check_progress(RouteId r, double progress) const;

  NetworkDescription desc_;
  std::vector<Segment> segments_;
  std::array<Route, 2> routes_{};
  std::vector<double> offsets_;
  std::array<std::vector<double>, 2> route_starts_{};  // cumulative progress at segment start
  std::array<double, 2> entry_length_{};
  double merge_point_ = 0.0;
  int merge_segment_ = -1;
};

}  // namespace rampmeter
