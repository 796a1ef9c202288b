#pragma once

#include <Eigen/SparseCholesky>
#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <memory>
#include <queue>

#include "sketchstress/mesh.hpp"
#include "sketchstress/shape_prep.hpp"

namespace sketchstress {

/// Tetrahedral discretization of a closed surface on a regular voxel grid.
struct VolumeMesh {
  std::vector<Vec3> nodes;
  std::vector<std::array<int, 4>> tets;
  std::vector<int> surface_map;  // surface vertex -> nearest node
  std::array<int, 3> grid{0, 0, 0};
  Vec3 origin = Vec3::Zero();
  Vec3 spacing = Vec3::Zero();
  std::size_t voxel_count = 0;

  double tet_volume(std::size_t t) const {
    const auto& e = tets[t];
    return (nodes[e[1]] - nodes[e[0]]).dot((nodes[e[2]] - nodes[e[0]]).cross(nodes[e[3]] - nodes[e[0]])) / 6.0;
  }
  double total_volume() const {
    double v = 0.0;
    for (std::size_t t = 0; t < tets.size(); ++t) v += tet_volume(t);
    return v;
  }
};

struct Material {
  double young_modulus = 1e9;  // Pa
  double poisson_ratio = 0.3;

  void validate() const {
    require(young_modulus > 0.0, ErrorCode::kInvalidArgument, "Young's modulus must be positive");
    require(poisson_ratio >= 0.0 && poisson_ratio < 0.5, ErrorCode::kInvalidArgument,
            "Poisson ratio must lie in [0, 0.5)");
  }

  /// Isotropic elasticity in Voigt order (xx, yy, zz, yz, xz, xy) with
  /// engineering shear strains.
  Eigen::Matrix<double, 6, 6> elasticity() const {
    const double e = young_modulus;
    const double nu = poisson_ratio;
    const double lambda = e * nu / ((1 + nu) * (1 - 2 * nu));
    const double mu = e / (2 * (1 + nu));
    Eigen::Matrix<double, 6, 6> c = Eigen::Matrix<double, 6, 6>::Zero();
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) c(i, j) = lambda;
      c(i, i) = lambda + 2 * mu;
      c(i + 3, i + 3) = mu;
    }
    return c;
  }
};

using Voigt = Eigen::Matrix<double, 6, 1>;

/// Per-surface-vertex von Mises stress in pascals, in surface vertex order.
struct StressField {
  std::vector<double> values;

  double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
};

inline Eigen::Matrix3d voigt_to_tensor(const Voigt& s) {
  Eigen::Matrix3d m;
  m << s[0], s[5], s[4], s[5], s[1], s[3], s[4], s[3], s[2];
  return m;
}

inline double von_mises(const Eigen::Matrix3d& sigma) {
  const double d01 = sigma(0, 0) - sigma(1, 1);
  const double d12 = sigma(1, 1) - sigma(2, 2);
  const double d20 = sigma(2, 2) - sigma(0, 0);
  const double shear = sigma(0, 1) * sigma(0, 1) + sigma(1, 2) * sigma(1, 2) + sigma(2, 0) * sigma(2, 0);
  return std::sqrt(0.5 * (d01 * d01 + d12 * d12 + d20 * d20) + 3.0 * shear);
}

namespace detail {

// Signed crossings of the +x ray from each (y, z) grid row; a voxel center
// is interior when the winding number of the crossings beyond it is
// positive. Using winding rather than parity keeps overlapping closed parts
// (furniture built from boxes) solid.
inline std::vector<std::uint8_t> interior_voxels(const SurfaceMesh& mesh, const std::array<int, 3>& n,
                                                 const Vec3& origin, const Vec3& h) {
  std::vector<std::uint8_t> inside(static_cast<std::size_t>(n[0]) * n[1] * n[2], 0);
  struct Crossing {
    double x;
    int sign;
  };
  // Perturb the rays off lattice-aligned edges.
  const double jy = 1.2345678e-7 * h.y();
  const double jz = 2.3456789e-7 * h.z();
  std::vector<Crossing> crossings;
  for (int k = 0; k < n[2]; ++k) {
    const double z = origin.z() + (k + 0.5) * h.z() + jz;
    for (int j = 0; j < n[1]; ++j) {
      const double y = origin.y() + (j + 0.5) * h.y() + jy;
      crossings.clear();
      for (std::size_t t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangles[t];
        const Vec3& a = mesh.vertices[tri[0]];
        const Vec3& b = mesh.vertices[tri[1]];
        const Vec3& c = mesh.vertices[tri[2]];
        if (std::max({a.y(), b.y(), c.y()}) < y || std::min({a.y(), b.y(), c.y()}) > y) continue;
        if (std::max({a.z(), b.z(), c.z()}) < z || std::min({a.z(), b.z(), c.z()}) > z) continue;
        const double w0 = (b.y() - y) * (c.z() - z) - (b.z() - z) * (c.y() - y);
        const double w1 = (c.y() - y) * (a.z() - z) - (c.z() - z) * (a.y() - y);
        const double w2 = (a.y() - y) * (b.z() - z) - (a.z() - z) * (b.y() - y);
        const bool pos = w0 > 0 && w1 > 0 && w2 > 0;
        const bool neg = w0 < 0 && w1 < 0 && w2 < 0;
        if (!pos && !neg) continue;
        const double sum = w0 + w1 + w2;
        const double x = (w0 * a.x() + w1 * b.x() + w2 * c.x()) / sum;
        crossings.push_back({x, pos ? 1 : -1});
      }
      std::sort(crossings.begin(), crossings.end(), [](const Crossing& l, const Crossing& r) { return l.x < r.x; });
      // winding(x) = sum of signs of crossings beyond x; walk from +inf.
      int winding = 0;
      int next = static_cast<int>(crossings.size()) - 1;
      for (int i = n[0] - 1; i >= 0; --i) {
        const double x = origin.x() + (i + 0.5) * h.x();
        while (next >= 0 && crossings[static_cast<std::size_t>(next)].x > x) {
          winding += crossings[static_cast<std::size_t>(next)].sign;
          --next;
        }
        inside[(static_cast<std::size_t>(k) * n[1] + j) * n[0] + i] = winding > 0 ? 1 : 0;
      }
    }
  }
  return inside;
}

// Keeps the largest face-connected voxel cluster; clusters joined only along
// edges or corners would be mechanisms.
inline void keep_largest_component(std::vector<std::uint8_t>& inside, const std::array<int, 3>& n) {
  std::vector<int> label(inside.size(), -1);
  std::vector<std::size_t> sizes;
  auto id = [&](int i, int j, int k) { return (static_cast<std::size_t>(k) * n[1] + j) * n[0] + i; };
  for (int k = 0; k < n[2]; ++k) {
    for (int j = 0; j < n[1]; ++j) {
      for (int i = 0; i < n[0]; ++i) {
        const std::size_t s = id(i, j, k);
        if (!inside[s] || label[s] >= 0) continue;
        const int comp = static_cast<int>(sizes.size());
        sizes.push_back(0);
        std::queue<std::array<int, 3>> q;
        q.push({i, j, k});
        label[s] = comp;
        while (!q.empty()) {
          const auto c = q.front();
          q.pop();
          ++sizes.back();
          static constexpr int d[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
          for (const auto& o : d) {
            const int a = c[0] + o[0], b = c[1] + o[1], e = c[2] + o[2];
            if (a < 0 || b < 0 || e < 0 || a >= n[0] || b >= n[1] || e >= n[2]) continue;
            const std::size_t t = id(a, b, e);
            if (inside[t] && label[t] < 0) {
              label[t] = comp;
              q.push({a, b, e});
            }
          }
        }
      }
    }
  }
  if (sizes.size() <= 1) return;
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t s = 0; s < inside.size(); ++s) {
    if (inside[s] && label[s] != keep) inside[s] = 0;
  }
}

}  // namespace detail

/// Voxelizes the interior at `resolution` cells per unit length (cells are
/// fitted to the bounding box, so each axis gets round(extent * resolution)
/// cells) and splits every voxel into five tetrahedra with alternating
/// orientation so neighboring voxels share face diagonals.
inline VolumeMesh discretize(const SurfaceMesh& mesh, double resolution) {
  require(resolution >= 8.0, ErrorCode::kInvalidArgument, "discretization resolution must be >= 8");
  require_watertight(mesh);

  VolumeMesh vol;
  const BoundingBox box = mesh.bounds();
  vol.origin = box.lo;
  for (int a = 0; a < 3; ++a) {
    const double extent = box.hi[a] - box.lo[a];
    vol.grid[a] = std::max(1, static_cast<int>(std::lround(extent * resolution)));
    vol.spacing[a] = extent / vol.grid[a];
  }
  const auto& n = vol.grid;
  std::vector<std::uint8_t> inside = detail::interior_voxels(mesh, n, vol.origin, vol.spacing);
  detail::keep_largest_component(inside, n);

  const std::size_t nx1 = static_cast<std::size_t>(n[0]) + 1;
  const std::size_t ny1 = static_cast<std::size_t>(n[1]) + 1;
  std::vector<int> node_id(nx1 * ny1 * (static_cast<std::size_t>(n[2]) + 1), -1);
  auto corner_index = [&](int i, int j, int k) { return (static_cast<std::size_t>(k) * ny1 + j) * nx1 + i; };
  auto node = [&](int i, int j, int k) {
    int& slot = node_id[corner_index(i, j, k)];
    if (slot < 0) {
      slot = static_cast<int>(vol.nodes.size());
      vol.nodes.push_back(vol.origin + Vec3(i * vol.spacing.x(), j * vol.spacing.y(), k * vol.spacing.z()));
    }
    return slot;
  };

  static constexpr int kEven[5][4] = {{1, 2, 4, 7}, {0, 1, 2, 4}, {3, 1, 2, 7}, {5, 1, 4, 7}, {6, 2, 4, 7}};
  static constexpr int kOdd[5][4] = {{0, 3, 5, 6}, {1, 0, 3, 5}, {2, 0, 3, 6}, {4, 0, 5, 6}, {7, 3, 5, 6}};
  for (int k = 0; k < n[2]; ++k) {
    for (int j = 0; j < n[1]; ++j) {
      for (int i = 0; i < n[0]; ++i) {
        if (!inside[(static_cast<std::size_t>(k) * n[1] + j) * n[0] + i]) continue;
        ++vol.voxel_count;
        int corner[8];
        for (int c = 0; c < 8; ++c) corner[c] = node(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
        const auto& pattern = ((i + j + k) % 2 == 0) ? kEven : kOdd;
        for (const auto& tet : pattern) {
          std::array<int, 4> e{corner[tet[0]], corner[tet[1]], corner[tet[2]], corner[tet[3]]};
          vol.tets.push_back(e);
          if (vol.tet_volume(vol.tets.size() - 1) < 0) std::swap(vol.tets.back()[2], vol.tets.back()[3]);
        }
      }
    }
  }
  require(!vol.tets.empty(), ErrorCode::kEmptyRegion,
          "empty interior at this resolution; increase the discretization resolution");

  // Nearest node per surface vertex, searching outward on the lattice.
  vol.surface_map.resize(mesh.num_vertices());
  for (std::size_t v = 0; v < mesh.num_vertices(); ++v) {
    const Vec3 rel = (mesh.vertices[v] - vol.origin).cwiseQuotient(vol.spacing);
    const int ci = static_cast<int>(std::lround(rel.x()));
    const int cj = static_cast<int>(std::lround(rel.y()));
    const int ck = static_cast<int>(std::lround(rel.z()));
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    const int max_r = std::max({n[0], n[1], n[2]}) + 1;
    for (int r = 0; r <= max_r; ++r) {
      for (int k = ck - r; k <= ck + r; ++k) {
        for (int j = cj - r; j <= cj + r; ++j) {
          for (int i = ci - r; i <= ci + r; ++i) {
            if (std::max({std::abs(i - ci), std::abs(j - cj), std::abs(k - ck)}) != r) continue;
            if (i < 0 || j < 0 || k < 0 || i > n[0] || j > n[1] || k > n[2]) continue;
            const int id = node_id[corner_index(i, j, k)];
            if (id < 0) continue;
            const double d = (vol.nodes[static_cast<std::size_t>(id)] - mesh.vertices[v]).squaredNorm();
            if (d < best_d || (d == best_d && id < best)) {
              best_d = d;
              best = id;
            }
          }
        }
      }
      // A shell at lattice radius r+1 is at least r * min(h) away.
      if (best >= 0 && std::sqrt(best_d) <= r * vol.spacing.minCoeff()) break;
    }
    vol.surface_map[v] = best;
  }
  return vol;
}

/// Linear-elastic system with the fixed boundary eliminated. Factorizes the
/// reduced stiffness once; every load reuses the factorization.
class ElasticSolver {
 public:
  ElasticSolver(const VolumeMesh& volume, const Material& material, const RegionLabels& labels)
      : volume_(volume), material_(material), labels_(labels) {
    material_.validate();
    require(labels.is_fixed.size() == volume.surface_map.size(), ErrorCode::kInvalidArgument,
            "region labels do not match the discretized surface");
    elasticity_ = material_.elasticity();
    precompute_elements();
    mark_fixed_nodes();
    assemble_and_factor();
  }

  const VolumeMesh& volume() const { return volume_; }
  std::size_t free_dofs() const { return static_cast<std::size_t>(reduced_size_); }

  /// Nodal load vector (full 3N layout) for a set of simultaneous forces.
  Eigen::VectorXd load_vector(const std::vector<ForceSample>& forces) const {
    Eigen::VectorXd f = Eigen::VectorXd::Zero(3 * static_cast<Eigen::Index>(volume_.nodes.size()));
    for (const auto& force : forces) {
      require(force.triangle >= 0 && static_cast<std::size_t>(force.triangle) < triangles_.size(),
              ErrorCode::kInvalidArgument, "force is not attached to a surface triangle");
      const auto& tri = triangles_[static_cast<std::size_t>(force.triangle)];
      for (int k = 0; k < 3; ++k) {
        require(!labels_.fixed_vertex(tri[k]), ErrorCode::kInvalidArgument, "force applied on the fixed region");
      }
      for (int k = 0; k < 3; ++k) {
        const int node = volume_.surface_map[static_cast<std::size_t>(tri[k])];
        f.segment<3>(3 * node) += force.magnitude * force.barycentric[k] * force.direction;
      }
    }
    return f;
  }

  void set_surface_triangles(const std::vector<Triangle>& triangles) { triangles_ = triangles; }

  Eigen::MatrixXd displacements(const Eigen::MatrixXd& loads) const {
    Eigen::MatrixXd reduced(reduced_size_, loads.cols());
    for (Eigen::Index d = 0; d < static_cast<Eigen::Index>(dof_map_.size()); ++d) {
      if (dof_map_[static_cast<std::size_t>(d)] >= 0) reduced.row(dof_map_[static_cast<std::size_t>(d)]) = loads.row(d);
    }
    const Eigen::MatrixXd solved = factor_.solve(reduced);
    require(factor_.info() == Eigen::Success, ErrorCode::kSingularSystem, "back-substitution failed");
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(loads.rows(), loads.cols());
    for (Eigen::Index d = 0; d < static_cast<Eigen::Index>(dof_map_.size()); ++d) {
      if (dof_map_[static_cast<std::size_t>(d)] >= 0) u.row(d) = solved.row(dof_map_[static_cast<std::size_t>(d)]);
    }
    return u;
  }

  std::vector<Voigt> element_stresses(const Eigen::VectorXd& u) const {
    std::vector<Voigt> out(volume_.tets.size());
    for (std::size_t t = 0; t < volume_.tets.size(); ++t) {
      Eigen::Matrix<double, 12, 1> ue;
      for (int a = 0; a < 4; ++a) ue.segment<3>(3 * a) = u.segment<3>(3 * volume_.tets[t][a]);
      out[t] = elasticity_ * (strain_[t] * ue);
    }
    return out;
  }

  /// Von Mises per surface vertex: mean over the tetrahedra incident to the
  /// vertex's node.
  StressField surface_von_mises(const std::vector<Voigt>& stresses) const {
    std::vector<double> element_vm(stresses.size());
    for (std::size_t t = 0; t < stresses.size(); ++t) element_vm[t] = von_mises(voigt_to_tensor(stresses[t]));
    StressField field;
    field.values.resize(volume_.surface_map.size());
    for (std::size_t v = 0; v < volume_.surface_map.size(); ++v) {
      const auto& incident = node_tets_[static_cast<std::size_t>(volume_.surface_map[v])];
      double sum = 0.0;
      for (int t : incident) sum += element_vm[static_cast<std::size_t>(t)];
      field.values[v] = incident.empty() ? 0.0 : sum / static_cast<double>(incident.size());
    }
    return field;
  }

  StressField solve(const ForceSample& force) const { return solve_batch({force}).front(); }

  std::vector<StressField> solve_batch(const std::vector<ForceSample>& forces) const {
    std::vector<StressField> out;
    out.reserve(forces.size());
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < forces.size(); start += kChunk) {
      const std::size_t count = std::min(kChunk, forces.size() - start);
      Eigen::MatrixXd loads(3 * static_cast<Eigen::Index>(volume_.nodes.size()), static_cast<Eigen::Index>(count));
      for (std::size_t c = 0; c < count; ++c) loads.col(static_cast<Eigen::Index>(c)) = load_vector({forces[start + c]});
      const Eigen::MatrixXd u = displacements(loads);
      for (std::size_t c = 0; c < count; ++c) {
        out.push_back(surface_von_mises(element_stresses(u.col(static_cast<Eigen::Index>(c)))));
      }
    }
    return out;
  }

 private:
  void precompute_elements() {
    strain_.resize(volume_.tets.size());
    node_tets_.assign(volume_.nodes.size(), {});
    for (std::size_t t = 0; t < volume_.tets.size(); ++t) {
      const auto& e = volume_.tets[t];
      Eigen::Matrix3d d;
      for (int a = 0; a < 3; ++a) d.col(a) = volume_.nodes[e[a + 1]] - volume_.nodes[e[0]];
      const Eigen::Matrix3d inv = d.inverse();
      Eigen::Matrix<double, 4, 3> grads;
      grads.block<3, 3>(1, 0) = inv;
      grads.row(0) = -inv.colwise().sum();
      Eigen::Matrix<double, 6, 12> b = Eigen::Matrix<double, 6, 12>::Zero();
      for (int a = 0; a < 4; ++a) {
        const double gx = grads(a, 0), gy = grads(a, 1), gz = grads(a, 2);
        b(0, 3 * a) = gx;
        b(1, 3 * a + 1) = gy;
        b(2, 3 * a + 2) = gz;
        b(3, 3 * a + 1) = gz;
        b(3, 3 * a + 2) = gy;
        b(4, 3 * a) = gz;
        b(4, 3 * a + 2) = gx;
        b(5, 3 * a) = gy;
        b(5, 3 * a + 1) = gx;
      }
      strain_[t] = b;
      for (int a = 0; a < 4; ++a) node_tets_[static_cast<std::size_t>(e[a])].push_back(static_cast<int>(t));
    }
  }

  void mark_fixed_nodes() {
    fixed_node_.assign(volume_.nodes.size(), 0);
    std::vector<int> fixed;
    for (int v : labels_.fixed) {
      const int node = volume_.surface_map[static_cast<std::size_t>(v)];
      if (!fixed_node_[static_cast<std::size_t>(node)]) fixed.push_back(node);
      fixed_node_[static_cast<std::size_t>(node)] = 1;
    }
    require(!fixed.empty(), ErrorCode::kSingularSystem, "no fixed nodes: the system is singular");
    // Rigid rotations survive unless the constrained nodes span a plane.
    const Vec3 p0 = volume_.nodes[static_cast<std::size_t>(fixed.front())];
    Vec3 axis = Vec3::Zero();
    for (int id : fixed) {
      const Vec3 d = volume_.nodes[static_cast<std::size_t>(id)] - p0;
      if (d.norm() > axis.norm()) axis = d;
    }
    double off_axis = 0.0;
    if (axis.norm() > 0) {
      const Vec3 dir = axis.normalized();
      for (int id : fixed) {
        const Vec3 d = volume_.nodes[static_cast<std::size_t>(id)] - p0;
        off_axis = std::max(off_axis, (d - d.dot(dir) * dir).norm());
      }
    }
    require(off_axis > 1e-9 * std::max(1.0, axis.norm()), ErrorCode::kSingularSystem,
            "fixed nodes are collinear: insufficient constraints, the system is singular");
  }

  void assemble_and_factor() {
    const std::size_t ndof = 3 * volume_.nodes.size();
    dof_map_.assign(ndof, -1);
    reduced_size_ = 0;
    for (std::size_t n = 0; n < volume_.nodes.size(); ++n) {
      if (fixed_node_[n]) continue;
      for (int k = 0; k < 3; ++k) dof_map_[3 * n + static_cast<std::size_t>(k)] = reduced_size_++;
    }
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(volume_.tets.size() * 78);
    for (std::size_t t = 0; t < volume_.tets.size(); ++t) {
      const double vol = volume_.tet_volume(t);
      const Eigen::Matrix<double, 12, 12> ke = vol * strain_[t].transpose() * elasticity_ * strain_[t];
      const auto& e = volume_.tets[t];
      for (int a = 0; a < 12; ++a) {
        const int ra = dof_map_[3 * static_cast<std::size_t>(e[a / 3]) + static_cast<std::size_t>(a % 3)];
        if (ra < 0) continue;
        for (int b = 0; b < 12; ++b) {
          const int rb = dof_map_[3 * static_cast<std::size_t>(e[b / 3]) + static_cast<std::size_t>(b % 3)];
          if (rb < 0 || rb > ra) continue;  // lower triangle only
          triplets.emplace_back(ra, rb, ke(a, b));
        }
      }
    }
    Eigen::SparseMatrix<double> k(reduced_size_, reduced_size_);
    k.setFromTriplets(triplets.begin(), triplets.end());
    factor_.compute(k);
    require(factor_.info() == Eigen::Success, ErrorCode::kSingularSystem,
            "stiffness factorization failed: the constrained system is singular");
  }

  const VolumeMesh& volume_;
  Material material_;
  const RegionLabels& labels_;
  std::vector<Triangle> triangles_;
  Eigen::Matrix<double, 6, 6> elasticity_;
  std::vector<Eigen::Matrix<double, 6, 12>> strain_;
  std::vector<std::vector<int>> node_tets_;
  std::vector<std::uint8_t> fixed_node_;
  std::vector<int> dof_map_;
  int reduced_size_ = 0;
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower> factor_;
};

inline std::unique_ptr<ElasticSolver> make_solver(const SurfaceMesh& mesh, const VolumeMesh& volume,
                                                  const Material& material, const RegionLabels& labels) {
  auto solver = std::make_unique<ElasticSolver>(volume, material, labels);
  solver->set_surface_triangles(mesh.triangles);
  return solver;
}

/// One factorization per call; use `batch_solve` for many loads on a shape.
inline StressField solve(const SurfaceMesh& mesh, const VolumeMesh& volume, const Material& material,
                         const RegionLabels& labels, const ForceSample& force) {
  return make_solver(mesh, volume, material, labels)->solve(force);
}

inline std::vector<StressField> batch_solve(const SurfaceMesh& mesh, const VolumeMesh& volume,
                                            const Material& material, const RegionLabels& labels,
                                            const std::vector<ForceSample>& forces) {
  if (forces.empty()) return {};
  return make_solver(mesh, volume, material, labels)->solve_batch(forces);
}

// --- serialization: raw little-endian float64 + JSON header -------------------

inline void save_stress_field(const std::filesystem::path& base, const StressField& field) {
  {
    std::ofstream bin(base.string() + ".bin", std::ios::binary);
    require(static_cast<bool>(bin), ErrorCode::kIo, "cannot write " + base.string() + ".bin");
    bin.write(reinterpret_cast<const char*>(field.values.data()),
              static_cast<std::streamsize>(field.values.size() * sizeof(double)));
  }
  nlohmann::json header{{"units", "Pa"},
                        {"dtype", "float64-le"},
                        {"count", field.values.size()},
                        {"order", "surface-vertex"},
                        {"quantity", "von_mises"},
                        {"format_version", 1}};
  std::ofstream js(base.string() + ".json");
  require(static_cast<bool>(js), ErrorCode::kIo, "cannot write " + base.string() + ".json");
  js << header.dump(2) << '\n';
}

inline StressField load_stress_field(const std::filesystem::path& base) {
  std::ifstream js(base.string() + ".json");
  require(static_cast<bool>(js), ErrorCode::kIo, "cannot read " + base.string() + ".json");
  const auto header = nlohmann::json::parse(js);
  require(header.at("units") == "Pa" && header.at("dtype") == "float64-le", ErrorCode::kIo,
          "unsupported stress field header");
  StressField field;
  field.values.resize(header.at("count").get<std::size_t>());
  std::ifstream bin(base.string() + ".bin", std::ios::binary);
  bin.read(reinterpret_cast<char*>(field.values.data()),
           static_cast<std::streamsize>(field.values.size() * sizeof(double)));
  require(static_cast<bool>(bin), ErrorCode::kIo, "truncated stress field " + base.string() + ".bin");
  return field;
}

}  // namespace sketchstress
