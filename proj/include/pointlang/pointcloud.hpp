#pragma once

#include <string>
#include <vector>

#include "pointlang/common.hpp"
#include "pointlang/rng.hpp"

namespace pointlang {

// Colored point cloud: n rows of [x y z r g b], row-major. Coordinates live
// in normalized (unit-sphere) space, colors in [0,1]. Stored as doubles in
// memory; the on-disk format is float32, and producers snap through float32
// (snap_f32) so file round trips are bit-exact.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(int n) : n_(n), a_(size_t(n) * 6, 0.0) {
    if (n < 1) fail<ContractError>("PointCloud: need at least one point");
  }
  static PointCloud from(std::vector<double> rows);

  int size() const { return n_; }
  double at(int i, int c) const { return a_[size_t(i) * 6 + size_t(c)]; }
  double& at(int i, int c) { return a_[size_t(i) * 6 + size_t(c)]; }
  const std::vector<double>& data() const { return a_; }
  std::vector<double>& data() { return a_; }

  // Throws unless all coordinates are finite and colors lie in [0,1].
  void validate() const;

 private:
  int n_ = 0;
  std::vector<double> a_;
};

// Grouped patches: one center plus its k nearest member points per group.
struct PatchSet {
  int groups = 0;
  int k = 0;
  std::vector<double> centers;  // groups x 3 (XYZ)
  std::vector<int> members;     // groups x k point indices
};

// Centers XYZ at the centroid and scales so the farthest point sits at radius
// 1 (all-coincident clouds stay at the origin). Colors untouched.
PointCloud normalize_unit_sphere(const PointCloud& pc);

// Farthest point sampling; the first center is drawn from rng, every next
// center maximizes the minimum distance to the chosen set, ties resolved to
// the lowest index. Distances use XYZ only.
std::vector<int> fps(const PointCloud& pc, int count, Rng& rng);
// Same greedy rule with a caller-chosen first center (deterministic paths).
std::vector<int> fps_from(const PointCloud& pc, int count, int first_index);
// Index of the lexicographically smallest (x,y,z) row; permutation-invariant
// start rule for evaluation-mode sampling.
int lexicographic_min_index(const PointCloud& pc);

// k nearest points (by XYZ distance, ties to lower index) for every center.
PatchSet knn_group(const PointCloud& pc, const std::vector<int>& center_indices,
                   int k);

// PTC file I/O. Binary layout: magic "PTC6" | u32 version=1 LE | u64 N LE |
// N*6 float32 LE row-major. ASCII fallback: one point per line, six decimal
// fields, '#' comments. Readers auto-detect by magic.
PointCloud read_ptc(const std::string& path);
void write_ptc(const std::string& path, const PointCloud& pc, bool ascii = false);

// Round every value through float32 (file precision) so a later write/read
// returns bit-identical doubles.
PointCloud snap_f32(const PointCloud& pc);

// Symmetric Chamfer distance over XYZ: mean of the two directed mean
// nearest-neighbor (Euclidean) distances.
double chamfer(const PointCloud& a, const PointCloud& b);

// Number of single-linkage clusters at the given XYZ distance threshold.
int cluster_count(const PointCloud& pc, double threshold);

// Uniformly subsamples to m points (without replacement) and adds Gaussian
// XYZ jitter of the given sigma; the degraded-input generator.
PointCloud degrade(const PointCloud& pc, int m, double sigma, Rng& rng);

}  // namespace pointlang
