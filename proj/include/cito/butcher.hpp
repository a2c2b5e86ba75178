#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cito {

/// Runge-Kutta coefficients. All tableaux produced here are stiffly accurate:
/// b equals the last row of a and c(n_s) = 1, so the last stage state is the
/// element endpoint.
struct ButcherTableau {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;
  Eigen::VectorXd c;

  int stages() const { return static_cast<int>(b.size()); }
};

namespace detail {

// Monic Jacobi recurrence coefficients for weight (1-x)^1 on [-1,1]; the
// roots of the degree-n polynomial are the interior right-Radau nodes.
inline void radau_interior_nodes(int n, Eigen::VectorXd& nodes) {
  nodes.resize(n);
  if (n == 0) return;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    const double dk = static_cast<double>(k);
    J(k, k) = -1.0 / ((2 * dk + 1.0) * (2 * dk + 3.0));
    if (k + 1 < n) {
      const double kk = dk + 1.0;
      const double beta = kk * (kk + 1.0) / ((2 * kk + 1.0) * (2 * kk + 1.0));
      J(k, k + 1) = std::sqrt(beta);
      J(k + 1, k) = J(k, k + 1);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Eigen::VectorXd x = es.eigenvalues();

  // Newton polish on the Jacobi recurrence to machine precision.
  auto poly = [&](double t, double& p, double& dp) {
    double pm1 = 0.0, dm1 = 0.0, pk = 1.0, dk_ = 0.0;
    for (int k = 0; k < n; ++k) {
      const double ak = J(k, k);
      const double bk = k > 0 ? J(k - 1, k) * J(k - 1, k) : 0.0;
      const double pn = (t - ak) * pk - bk * pm1;
      const double dn = pk + (t - ak) * dk_ - bk * dm1;
      pm1 = pk;
      dm1 = dk_;
      pk = pn;
      dk_ = dn;
    }
    p = pk;
    dp = dk_;
  };
  for (int i = 0; i < n; ++i) {
    for (int it = 0; it < 3; ++it) {
      double p, dp;
      poly(x(i), p, dp);
      if (dp != 0.0) x(i) -= p / dp;
    }
  }
  std::sort(x.data(), x.data() + n);
  for (int i = 0; i < n; ++i) nodes(i) = 0.5 * (x(i) + 1.0);  // map to [0,1]
}

}  // namespace detail

/// Radau IIA collocation tableau of order 2*n_s - 1 for n_s in {1,2,3,4}.
inline ButcherTableau radau_tableau(int n_s) {
  if (n_s < 1 || n_s > 4)
    throw std::invalid_argument("radau_tableau: unsupported stage count " + std::to_string(n_s));
  ButcherTableau t;
  t.c.resize(n_s);
  Eigen::VectorXd interior;
  detail::radau_interior_nodes(n_s - 1, interior);
  for (int i = 0; i < n_s - 1; ++i) t.c(i) = interior(i);
  t.c(n_s - 1) = 1.0;

  // Collocation conditions: sum_j a(i,j) c_j^(q-1) = c_i^q / q, q = 1..n_s.
  Eigen::MatrixXd V(n_s, n_s);
  for (int q = 0; q < n_s; ++q)
    for (int j = 0; j < n_s; ++j) V(q, j) = std::pow(t.c(j), q);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(V);
  t.a.resize(n_s, n_s);
  Eigen::VectorXd rhs(n_s);
  for (int i = 0; i < n_s; ++i) {
    for (int q = 0; q < n_s; ++q) rhs(q) = std::pow(t.c(i), q + 1) / (q + 1);
    t.a.row(i) = lu.solve(rhs).transpose();
  }
  t.b = t.a.row(n_s - 1).transpose();  // stiffly accurate
  return t;
}

}  // namespace cito
