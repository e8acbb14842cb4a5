#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fovreg {

/// Loss value together with its gradients w.r.t. both descriptors.
struct LossOutput {
  double value = 0.0;
  Eigen::VectorXd grad_i;
  Eigen::VectorXd grad_j;
};

inline double euclidean_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("euclidean_distance: dimension mismatch");
  return (a - b).norm();
}

/// Squared error between the descriptor distance and the target 1 - psi.
/// The distance gradient at d = 0 is taken as 0 (subgradient choice).
inline LossOutput mse_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                           double psi) {
  const Eigen::VectorXd diff = a - b;
  const double d = diff.norm();
  const double residual = d - (1.0 - psi);
  LossOutput out;
  out.value = residual * residual;
  if (d > 0.0) {
    out.grad_i = (2.0 * residual / d) * diff;
  } else {
    out.grad_i = Eigen::VectorXd::Zero(a.size());
  }
  out.grad_j = -out.grad_i;
  return out;
}

/// Pairwise contrastive objective: psi * d^2 + (1 - psi) * max(0, m - d)^2.
/// With psi in {0, 1} this is the binary contrastive loss; with graded psi it
/// is the generalized variant. Hinge subgradients at d = 0 and d = m are 0.
inline LossOutput weighted_contrastive_loss(const Eigen::VectorXd& a,
                                            const Eigen::VectorXd& b, double psi,
                                            double margin) {
  const Eigen::VectorXd diff = a - b;
  const double d = diff.norm();
  const double hinge = std::max(0.0, margin - d);
  LossOutput out;
  out.value = psi * d * d + (1.0 - psi) * hinge * hinge;
  out.grad_i = (2.0 * psi) * diff;
  if (hinge > 0.0 && d > 0.0) {
    out.grad_i -= ((1.0 - psi) * 2.0 * hinge / d) * diff;
  }
  out.grad_j = -out.grad_i;
  return out;
}

inline LossOutput contrastive_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                                   double psi_binary, double margin) {
  if (psi_binary != 0.0 && psi_binary != 1.0)
    throw std::invalid_argument("contrastive_loss: psi must be binary");
  return weighted_contrastive_loss(a, b, psi_binary, margin);
}

inline LossOutput gcl_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                           double psi, double margin) {
  return weighted_contrastive_loss(a, b, psi, margin);
}

/// 1 if psi > threshold else 0 (strict inequality).
inline double binarize_psi(double psi, double threshold) {
  return psi > threshold ? 1.0 : 0.0;
}

}  // namespace fovreg
