#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace chdqr {

// Axis-aligned box that closes the unbounded outer Voronoi cells so every
// cell area is finite. Supports d in {1, 2}.
struct BoundingBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int dim() const { return static_cast<int>(lower.size()); }
  double volume() const;
  bool contains(const Eigen::VectorXd& p) const;
  Eigen::VectorXd clamp(const Eigen::VectorXd& p) const;
  void validate() const;  // lower < upper, d in {1,2}
};

// K learnable points in target space plus the box that bounds their cells.
struct PrototypeSet {
  Eigen::MatrixXd coords;  // K x d
  BoundingBox box;

  int k() const { return static_cast<int>(coords.rows()); }
  int dim() const { return static_cast<int>(coords.cols()); }
};

// One bounded Voronoi cell: an interval for d=1, a convex polygon (CCW
// vertex list) for d=2.
struct VoronoiCell {
  int prototype_index = -1;
  int dim = 0;
  double lo = 0.0, hi = 0.0;                  // d = 1
  std::vector<Eigen::Vector2d> polygon;       // d = 2
  double area() const;
  bool contains(const Eigen::VectorXd& p, double eps = 1e-9) const;
};

// Per-dimension min/max of the targets expanded by padding_fraction x range
// on each side; a degenerate dimension (max == min) is expanded by 1.0.
BoundingBox compute_bounding_box(const Eigen::MatrixXd& targets,
                                 double padding_fraction);

// Bounded Voronoi tessellation. d=1: midpoint splits of the sorted
// prototypes. d=2: per-cell half-plane clipping of the box polygon, bisectors
// applied nearest-first with an early-exit radius bound. Throws NumericError
// on duplicate prototypes (pairwise distance < 1e-12) or an empty cell.
std::vector<VoronoiCell> voronoi_cells(const PrototypeSet& protos);

// Cell areas (interval lengths / shoelace polygon areas). Entries sum to the
// box volume; a relative drift above 1e-9 is rejected.
Eigen::VectorXd voronoi_areas(const PrototypeSet& protos);

// Monte Carlo oracle: uniform samples in the box assigned to the nearest
// prototype; area estimate = hit fraction x box volume.
Eigen::VectorXd monte_carlo_areas(const PrototypeSet& protos,
                                  std::int64_t n_samples, std::uint64_t seed);

// Index of the nearest prototype, ties broken by lowest index.
int nearest_prototype(const Eigen::MatrixXd& coords, const Eigen::VectorXd& p);

}  // namespace chdqr
