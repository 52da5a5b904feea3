#include "chdqr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chdqr/error.hpp"
#include "chdqr/rng.hpp"

namespace chdqr {

double BoundingBox::volume() const {
  double v = 1.0;
  for (int j = 0; j < dim(); ++j) v *= upper[j] - lower[j];
  return v;
}

bool BoundingBox::contains(const Eigen::VectorXd& p) const {
  for (int j = 0; j < dim(); ++j)
    if (p[j] < lower[j] || p[j] > upper[j]) return false;
  return true;
}

Eigen::VectorXd BoundingBox::clamp(const Eigen::VectorXd& p) const {
  Eigen::VectorXd out = p;
  for (int j = 0; j < dim(); ++j)
    out[j] = std::min(std::max(out[j], lower[j]), upper[j]);
  return out;
}

void BoundingBox::validate() const {
  if (dim() < 1 || dim() > 2)
    throw ConfigError("bounding box dimension must be 1 or 2, got " +
                      std::to_string(dim()));
  if (upper.size() != lower.size())
    throw ConfigError("bounding box lower/upper dimension mismatch");
  for (int j = 0; j < dim(); ++j)
    if (!(lower[j] < upper[j]))
      throw ConfigError("bounding box requires lower < upper in dimension " +
                        std::to_string(j));
}

double VoronoiCell::area() const {
  if (dim == 1) return hi - lo;
  // Shoelace formula on the clipped polygon.
  double a = 0.0;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = polygon[i];
    const auto& q = polygon[(i + 1) % n];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(a);
}

bool VoronoiCell::contains(const Eigen::VectorXd& p, double eps) const {
  if (dim == 1) return p[0] >= lo - eps && p[0] <= hi + eps;
  const std::size_t n = polygon.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = polygon[i];
    const auto& b = polygon[(i + 1) % n];
    double cross = (b.x() - a.x()) * (p[1] - a.y()) -
                   (b.y() - a.y()) * (p[0] - a.x());
    if (cross < -eps) return false;  // CCW orientation
  }
  return true;
}

BoundingBox compute_bounding_box(const Eigen::MatrixXd& targets,
                                 double padding_fraction) {
  if (targets.rows() == 0) throw DataError("compute_bounding_box: no targets");
  if (padding_fraction < 0)
    throw ConfigError("padding_fraction must be >= 0");
  const int d = static_cast<int>(targets.cols());
  BoundingBox box;
  box.lower = targets.colwise().minCoeff();
  box.upper = targets.colwise().maxCoeff();
  for (int j = 0; j < d; ++j) {
    double range = box.upper[j] - box.lower[j];
    double pad = range > 0 ? padding_fraction * range : 1.0;
    box.lower[j] -= pad;
    box.upper[j] += pad;
  }
  box.validate();
  return box;
}

int nearest_prototype(const Eigen::MatrixXd& coords, const Eigen::VectorXd& p) {
  int best = 0;
  double best_d2 = (coords.row(0).transpose() - p).squaredNorm();
  for (int i = 1; i < coords.rows(); ++i) {
    double d2 = (coords.row(i).transpose() - p).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

namespace {

void check_duplicates(const PrototypeSet& protos) {
  const int k = protos.k();
  if (k < 1) throw ConfigError("prototype set is empty");
  if (protos.dim() == 1) {
    std::vector<double> xs(protos.coords.data(), protos.coords.data() + k);
    std::sort(xs.begin(), xs.end());
    for (int i = 1; i < k; ++i)
      if (xs[i] - xs[i - 1] < 1e-12)
        throw NumericError("degenerate tessellation: duplicate prototypes");
    return;
  }
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j)
      if ((protos.coords.row(i) - protos.coords.row(j)).norm() < 1e-12)
        throw NumericError("degenerate tessellation: duplicate prototypes " +
                           std::to_string(i) + "/" + std::to_string(j));
}

std::vector<VoronoiCell> cells_1d(const PrototypeSet& protos) {
  const int k = protos.k();
  const auto& box = protos.box;
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return protos.coords(a, 0) < protos.coords(b, 0);
  });
  std::vector<VoronoiCell> cells(k);
  double prev = box.lower[0];
  for (int r = 0; r < k; ++r) {
    int i = order[r];
    VoronoiCell& c = cells[i];
    c.prototype_index = i;
    c.dim = 1;
    c.lo = prev;
    c.hi = r + 1 < k ? 0.5 * (protos.coords(order[r], 0) +
                              protos.coords(order[r + 1], 0))
                     : box.upper[0];
    c.hi = std::min(std::max(c.hi, box.lower[0]), box.upper[0]);
    c.lo = std::min(c.lo, c.hi);
    prev = c.hi;
    if (!(c.hi - c.lo > 0))
      throw NumericError("degenerate tessellation: empty cell for prototype " +
                         std::to_string(i));
  }
  return cells;
}

// Sutherland-Hodgman clip of a convex polygon against n.p <= c.
std::vector<Eigen::Vector2d> clip_halfplane(
    const std::vector<Eigen::Vector2d>& poly, const Eigen::Vector2d& n,
    double c) {
  std::vector<Eigen::Vector2d> out;
  const std::size_t m = poly.size();
  out.reserve(m + 1);
  for (std::size_t i = 0; i < m; ++i) {
    const Eigen::Vector2d& a = poly[i];
    const Eigen::Vector2d& b = poly[(i + 1) % m];
    double da = n.dot(a) - c;
    double db = n.dot(b) - c;
    if (da <= 0) out.push_back(a);
    if ((da < 0 && db > 0) || (da > 0 && db < 0)) {
      double t = da / (da - db);
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

std::vector<VoronoiCell> cells_2d(const PrototypeSet& protos) {
  const int k = protos.k();
  const auto& box = protos.box;
  std::vector<Eigen::Vector2d> box_poly = {
      {box.lower[0], box.lower[1]},
      {box.upper[0], box.lower[1]},
      {box.upper[0], box.upper[1]},
      {box.lower[0], box.upper[1]}};
  std::vector<VoronoiCell> cells(k);
  std::vector<int> order(k);
  std::vector<double> d2(k);
  for (int i = 0; i < k; ++i) {
    const Eigen::Vector2d ci = protos.coords.row(i).transpose();
    // Clip nearest bisectors first so the radius bound can stop early; the
    // intersection of half-planes is order-independent.
    std::iota(order.begin(), order.end(), 0);
    for (int j = 0; j < k; ++j)
      d2[j] = (protos.coords.row(j).transpose() - ci).squaredNorm();
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return d2[a] != d2[b] ? d2[a] < d2[b] : a < b;
    });
    std::vector<Eigen::Vector2d> poly = box_poly;
    double r_max = 0.0;
    for (const auto& v : poly) r_max = std::max(r_max, (v - ci).norm());
    for (int r = 1; r < k && !poly.empty(); ++r) {
      int j = order[r];
      double dist = std::sqrt(d2[j]);
      if (0.5 * dist > r_max) break;  // no farther bisector can cut the cell
      const Eigen::Vector2d cj = protos.coords.row(j).transpose();
      Eigen::Vector2d n = cj - ci;
      double c = 0.5 * (cj.squaredNorm() - ci.squaredNorm());
      poly = clip_halfplane(poly, n, c);
      r_max = 0.0;
      for (const auto& v : poly) r_max = std::max(r_max, (v - ci).norm());
    }
    VoronoiCell& cell = cells[i];
    cell.prototype_index = i;
    cell.dim = 2;
    cell.polygon = std::move(poly);
    if (cell.polygon.size() < 3 || !(cell.area() > 0))
      throw NumericError("degenerate tessellation: empty cell for prototype " +
                         std::to_string(i));
  }
  return cells;
}

}  // namespace

std::vector<VoronoiCell> voronoi_cells(const PrototypeSet& protos) {
  protos.box.validate();
  if (protos.dim() != protos.box.dim())
    throw ConfigError("prototype/box dimension mismatch");
  check_duplicates(protos);
  return protos.dim() == 1 ? cells_1d(protos) : cells_2d(protos);
}

Eigen::VectorXd voronoi_areas(const PrototypeSet& protos) {
  auto cells = voronoi_cells(protos);
  Eigen::VectorXd areas(protos.k());
  for (int i = 0; i < protos.k(); ++i) areas[i] = cells[i].area();
  double total = areas.sum();
  double vol = protos.box.volume();
  if (std::abs(total - vol) > 1e-9 * vol)
    throw NumericError("voronoi_areas: area sum " + std::to_string(total) +
                       " drifted from box volume " + std::to_string(vol));
  // Normalize out the residual so downstream sum checks see an exact partition.
  areas *= vol / total;
  return areas;
}

Eigen::VectorXd monte_carlo_areas(const PrototypeSet& protos,
                                  std::int64_t n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("monte_carlo_areas: n_samples < 1");
  const int d = protos.dim();
  Rng rng(seed);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(protos.k());
  Eigen::VectorXd p(d);
  for (std::int64_t s = 0; s < n_samples; ++s) {
    for (int j = 0; j < d; ++j)
      p[j] = rng.uniform(protos.box.lower[j], protos.box.upper[j]);
    counts[nearest_prototype(protos.coords, p)] += 1.0;
  }
  return counts * (protos.box.volume() / static_cast<double>(n_samples));
}

}  // namespace chdqr
