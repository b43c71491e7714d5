#include "netgeom.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace rampmeter {

const char* route_name(RouteId r) { return r == RouteId::North ? "north" : "west"; }

RouteId route_from_name(const std::string& name) {
  if (name == "north") return RouteId::North;
  if (name == "west") return RouteId::West;
  throw std::invalid_argument("unknown route '" + name + "'");
}

NetworkDescription NetworkDescription::from_geometry(const GeometrySpec& g) {
  if (!(g.frame_length > 0 && g.north_entry > 0 && g.west_entry > 0 && g.circumference > 0))
    throw std::invalid_argument("network: all lengths must be positive");
  const double exit_length = g.frame_length - g.west_entry - g.circumference;
  if (!(exit_length > 0))
    throw std::invalid_argument("network.frame_length: must exceed west_entry + circumference");
  const double arc = g.circumference / 4.0;

  NetworkDescription d;
  d.segments = {
      {"west_in", g.west_entry, {"ring_ws"}, false},
      {"ring_ws", arc, {"ring_se"}, true},
      {"ring_se", arc, {"ring_en"}, true},
      {"ring_en", arc, {"ring_nw"}, true},
      {"ring_nw", arc, {"ring_ws", "exit"}, true},
      {"exit", exit_length, {}, false},
      {"north_in", g.north_entry, {"ring_nw"}, false},
  };
  d.west_route = {"west_in", "ring_ws", "ring_se", "ring_en", "ring_nw", "exit"};
  d.north_route = {"north_in", "ring_nw", "exit"};
  return d;
}

RoadNetwork::RoadNetwork(const NetworkDescription& desc) : desc_(desc) {
  std::map<std::string, int> ids;
  for (const auto& s : desc.segments) {
    if (!(s.length > 0) || !std::isfinite(s.length))
      throw std::invalid_argument("network.segments." + s.name + ".length: must be positive");
    if (!ids.emplace(s.name, static_cast<int>(ids.size())).second)
      throw std::invalid_argument("network.segments: duplicate segment '" + s.name + "'");
  }
  auto lookup = [&](const std::string& name, const std::string& where) {
    auto it = ids.find(name);
    if (it == ids.end()) throw std::invalid_argument(where + ": unknown segment '" + name + "'");
    return it->second;
  };
  for (const auto& s : desc.segments) {
    Segment seg{s.name, s.length, {}, s.roundabout};
    for (const auto& succ : s.successors)
      seg.successors.push_back(lookup(succ, "network.segments." + s.name + ".successors"));
    segments_.push_back(std::move(seg));
  }

  // Roundabout segments must form one directed cycle.
  std::vector<int> ring;
  for (int i = 0; i < static_cast<int>(segments_.size()); ++i)
    if (segments_[i].roundabout) ring.push_back(i);
  if (ring.empty()) throw std::invalid_argument("network: no roundabout segments");
  auto ring_next = [&](int id) {
    int next = -1;
    for (int s : segments_[id].successors) {
      if (!segments_[s].roundabout) continue;
      if (next != -1)
        throw std::invalid_argument("network: roundabout segment '" + segments_[id].name +
                                    "' has more than one roundabout successor");
      next = s;
    }
    if (next == -1)
      throw std::invalid_argument("network: roundabout segment '" + segments_[id].name +
                                  "' does not continue the circle");
    return next;
  };
  {
    std::vector<bool> seen(segments_.size(), false);
    int cur = ring.front();
    for (std::size_t k = 0; k < ring.size(); ++k) {
      if (seen[cur]) throw std::invalid_argument("network: roundabout segments do not form a single cycle");
      seen[cur] = true;
      cur = ring_next(cur);
    }
    if (cur != ring.front())
      throw std::invalid_argument("network: roundabout segments do not form a single cycle");
  }

  auto build_route = [&](RouteId r, const std::vector<std::string>& names) {
    const std::string where = std::string("network.routes.") + route_name(r);
    if (names.empty()) throw std::invalid_argument(where + ": empty route");
    Route route;
    route.id = r;
    for (const auto& n : names) route.segments.push_back(lookup(n, where));
    for (std::size_t k = 1; k < route.segments.size(); ++k) {
      const auto& succ = segments_[route.segments[k - 1]].successors;
      if (std::find(succ.begin(), succ.end(), route.segments[k]) == succ.end())
        throw std::invalid_argument(where + ": '" + names[k] + "' does not follow '" + names[k - 1] + "'");
    }
    std::vector<int> sorted = route.segments;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument(where + ": a segment appears twice");
    auto& starts = route_starts_[route_index(r)];
    double acc = 0.0;
    for (int s : route.segments) {
      starts.push_back(acc);
      acc += segments_[s].length;
    }
    route.total_length = acc;

    double entry = 0.0;
    bool found = false;
    for (int s : route.segments) {
      if (segments_[s].roundabout) {
        found = true;
        break;
      }
      entry += segments_[s].length;
    }
    if (!found) throw std::invalid_argument(where + ": route never enters the roundabout");
    if (!(entry > 0)) throw std::invalid_argument(where + ": route has no entry segment");
    entry_length_[route_index(r)] = entry;
    routes_[route_index(r)] = std::move(route);
  };
  build_route(RouteId::North, desc.north_route);
  build_route(RouteId::West, desc.west_route);

  const auto& west = routes_[route_index(RouteId::West)].segments;
  const auto& north = routes_[route_index(RouteId::North)].segments;
  if (west.back() != north.back()) throw std::invalid_argument("network.routes: routes must share the exit");

  // The shared part of the north route must be a contiguous tail of the west route.
  auto first_shared = std::find_if(north.begin(), north.end(), [&](int s) {
    return std::find(west.begin(), west.end(), s) != west.end();
  });
  const auto k = static_cast<std::size_t>(first_shared - north.begin());
  auto west_pos = std::find(west.begin(), west.end(), north[k]);
  if (static_cast<std::size_t>(west.end() - west_pos) != north.size() - k ||
      !std::equal(north.begin() + static_cast<std::ptrdiff_t>(k), north.end(), west_pos))
    throw std::invalid_argument("network.routes: north route must join the west route and follow it to the exit");
  if (k == 0) throw std::invalid_argument("network.routes: north route has no segment of its own");

  offsets_.assign(segments_.size(), 0.0);
  double acc = 0.0;
  for (int s : west) {
    offsets_[s] = acc;
    acc += segments_[s].length;
  }
  merge_segment_ = north[k];
  merge_point_ = offsets_[merge_segment_];
  double back = merge_point_;
  for (std::size_t i = k; i-- > 0;) {
    back -= segments_[north[i]].length;
    offsets_[north[i]] = back;
  }
}

RoadNetwork RoadNetwork::scaled(double factor) const {
  if (!(factor > 0)) throw std::invalid_argument("network scale factor must be positive");
  NetworkDescription d = desc_;
  for (auto& s : d.segments) s.length *= factor;
  return RoadNetwork(d);
}

void RoadNetwork::check_progress(RouteId r, double progress) const {
  const double total = route(r).total_length;
  if (!(progress >= 0.0 && progress <= total))
    throw std::domain_error("progress " + std::to_string(progress) + " outside route " + route_name(r));
}

int RoadNetwork::segment_at(RouteId r, double progress) const {
  check_progress(r, progress);
  const auto& starts = route_starts_[route_index(r)];
  auto it = std::upper_bound(starts.begin(), starts.end(), progress);
  return static_cast<int>(it - starts.begin()) - 1;
}

int RoadNetwork::segment_id_at(RouteId r, double progress) const {
  return route(r).segments[segment_at(r, progress)];
}

double RoadNetwork::position_1d(RouteId r, double progress) const {
  const int idx = segment_at(r, progress);
  const int seg = route(r).segments[idx];
  return offsets_[seg] + (progress - route_starts_[route_index(r)][idx]);
}

double RoadNetwork::distance_to_roundabout(RouteId r, double progress, bool* inside) const {
  check_progress(r, progress);
  const double entry = entry_length(r);
  const bool past = progress > entry;
  if (inside) *inside = past;
  return past ? 0.0 : entry - progress;
}

bool RoadNetwork::on_roundabout(RouteId r, double progress) const {
  return segments_[segment_id_at(r, progress)].roundabout;
}

bool RoadNetwork::route_uses(RouteId r, int segment_id) const {
  const auto& s = route(r).segments;
  return std::find(s.begin(), s.end(), segment_id) != s.end();
}

}  // namespace rampmeter
