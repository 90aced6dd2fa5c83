#pragma once

#include <cstdint>
#include <vector>

#include "core/common.hpp"
#include "core/rng.hpp"

namespace ov::sim {

inline constexpr double kCell = 0.125;     // meters per grid cell
inline constexpr double kAgentRadius = 0.1;
inline constexpr double kStepLength = 0.25;  // exactly 2 cells
inline constexpr int kTurnDegrees = 30;
inline constexpr int kNumFamilies = 8;
inline constexpr int kNumCategories = 6;

struct SceneObject {
  int category = 0;  // 0..kNumCategories-1
  double x = 0, y = 0;  // meters
  double radius = 0.2;
};

// Immutable procedural floorplan. Bit-identical regeneration from
// (seed, family); shareable across worker threads.
struct SceneSpec {
  uint64_t seed = 0;
  int family = 0;
  int gw = 0, gh = 0;              // grid size in cells
  std::vector<uint8_t> grid;       // 1 = occupied, row-major [gy][gx]
  std::vector<SceneObject> objects;
  int family_label = 0;

  bool in_bounds(int cx, int cy) const {
    return cx >= 0 && cy >= 0 && cx < gw && cy < gh;
  }
  bool occupied(int cx, int cy) const {
    if (!in_bounds(cx, cy)) return true;
    return grid[static_cast<size_t>(cy) * gw + cx] != 0;
  }
  bool occupied_at(double x, double y) const {
    return occupied(static_cast<int>(std::floor(x / kCell)),
                    static_cast<int>(std::floor(y / kCell)));
  }
  // True when a disc of radius r centered at (x,y) meters overlaps no
  // occupied cell.
  bool disc_free(double x, double y, double r) const;
  int64_t free_cells() const;
  double width_m() const { return gw * kCell; }
  double height_m() const { return gh * kCell; }
};

// Deterministic generator; throws after bounded retries if a family cannot
// produce a connected floor.
SceneSpec generate_scene(uint64_t seed, int family);

// Flood fill count of cells reachable from the first free cell.
int64_t connected_free_cells(const SceneSpec& scene);

}  // namespace ov::sim
