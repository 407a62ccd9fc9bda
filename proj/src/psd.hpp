#pragma once

#include <Eigen/Dense>

namespace gridid::detail {

// Eigenvalues below this fraction of the mean eigenvalue are treated as zero.
inline constexpr double kEigenFloor = 1e-12;

inline double eigen_floor(const Eigen::VectorXd& eigenvalues) {
  if (eigenvalues.size() == 0) return 0.0;
  const double mean = eigenvalues.cwiseMax(0.0).sum() / static_cast<double>(eigenvalues.size());
  return kEigenFloor * mean;
}

struct PseudoDeterminant {
  double log_pdet = 0.0;
  int rank = 0;
};

inline PseudoDeterminant pseudo_determinant(const Eigen::VectorXd& eigenvalues) {
  PseudoDeterminant out;
  const double floor = eigen_floor(eigenvalues);
  for (Eigen::Index i = 0; i < eigenvalues.size(); ++i) {
    if (eigenvalues(i) > floor && eigenvalues(i) > 0.0) {
      out.log_pdet += std::log(eigenvalues(i));
      ++out.rank;
    }
  }
  return out;
}

}  // namespace gridid::detail
