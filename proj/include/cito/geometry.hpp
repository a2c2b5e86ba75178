#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cito/expr.hpp"

namespace cito::geom {

using Eigen::Matrix2d;
using Eigen::Vector2d;

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

struct Disc {
  double radius = 1.0;
};

/// Ellipse {x : (x-p)' P(theta) (x-p) <= 1} with P(theta) = R' P_hat R.
struct Ellipse {
  Matrix2d P_hat = Matrix2d::Identity();
};

/// Non-convex body: union of ellipses sharing the body center.
struct UnionOfEllipses {
  std::vector<Matrix2d> components;
};

using Shape = std::variant<Disc, Ellipse, UnionOfEllipses>;

inline void validate_spd(const Matrix2d& P, const std::string& what) {
  if ((P - P.transpose()).norm() > 1e-12 * (1.0 + P.norm()))
    throw std::invalid_argument(what + ": matrix not symmetric");
  Eigen::SelfAdjointEigenSolver<Matrix2d> es(P);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument(what + ": matrix not positive definite");
}

inline void validate_shape(const Shape& shape) {
  if (const auto* d = std::get_if<Disc>(&shape)) {
    if (d->radius <= 0.0) throw std::invalid_argument("shape: disc radius must be > 0");
  } else if (const auto* e = std::get_if<Ellipse>(&shape)) {
    validate_spd(e->P_hat, "shape: ellipse");
  } else if (const auto* u = std::get_if<UnionOfEllipses>(&shape)) {
    if (u->components.size() < 2)
      throw std::invalid_argument("shape: union must have at least 2 components");
    for (const auto& P : u->components) validate_spd(P, "shape: union component");
  }
}

/// Planar pose. theta is unbounded (no wrap-around) and only meaningful for
/// bodies whose state carries a rotation coordinate.
struct Pose {
  Vector2d p = Vector2d::Zero();
  double theta = 0.0;
};

inline Matrix2d rotation(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Matrix2d R;
  R << c, -s, s, c;
  return R;
}

/// P(theta) = R(theta)' P_hat R(theta); congruence by a rotation, so the
/// eigenvalues of P_hat are preserved.
inline Matrix2d ellipse_matrix(const Matrix2d& P_hat, double theta) {
  const Matrix2d R = rotation(theta);
  return R.transpose() * P_hat * R;
}

/// dP/dtheta = R' (J' P_hat + P_hat J) R with J the quarter-turn generator.
inline Matrix2d ellipse_matrix_dtheta(const Matrix2d& P_hat, double theta) {
  Matrix2d J;
  J << 0.0, -1.0, 1.0, 0.0;
  const Matrix2d R = rotation(theta);
  return R.transpose() * (J.transpose() * P_hat + P_hat * J) * R;
}

// ---------------------------------------------------------------------------
// Disc-disc gap (squared-distance form)
// ---------------------------------------------------------------------------

/// c = |p1-p2|^2 - (r1+r2)^2. Negative iff the discs overlap, zero at
/// tangency. The gradient w.r.t. p1 is 2(p1-p2), w.r.t. p2 is 2(p2-p1).
inline double disc_gap(const Vector2d& p1, double r1, const Vector2d& p2, double r2) {
  if (r1 <= 0.0 || r2 <= 0.0) throw std::invalid_argument("disc_gap: radii must be > 0");
  const double rsum = r1 + r2;
  return (p1 - p2).squaredNorm() - rsum * rsum;
}

// ---------------------------------------------------------------------------
// Implicit ellipse-ellipse signed distance
// ---------------------------------------------------------------------------

/// Algebraic variables of the scaling program: min alpha s.t.
/// f_i(p_d) = (p_d-p_i)' P_i (p_d-p_i) <= alpha, i = 1,2. At any KKT point
/// mu_1 + mu_2 = 1 and alpha >= 0; the gap value is c = alpha - 1.
struct SdfAlgebraic {
  double alpha = 0.0;
  Vector2d p_d = Vector2d::Zero();
  Eigen::Vector2d mu = Eigen::Vector2d::Zero();
};

struct SdfResult {
  SdfAlgebraic sdf;
  double gap = 0.0;  // alpha - 1
  bool degenerate = false;
  int iterations = 0;
  double kkt_residual = 0.0;
};

namespace detail {

struct SdfProblem {
  Matrix2d P1, P2;  // world-frame matrices at the given poses
  Vector2d p1, p2;

  double f(int i, const Vector2d& pd) const {
    const Vector2d d = pd - (i == 0 ? p1 : p2);
    return d.dot((i == 0 ? P1 : P2) * d);
  }
  Vector2d grad_f(int i, const Vector2d& pd) const {
    const Vector2d d = pd - (i == 0 ? p1 : p2);
    return 2.0 * (i == 0 ? P1 : P2) * d;
  }
};

}  // namespace detail

/// Solves the 3-variable convex scaling program with a damped Newton method on
/// a log-barrier path followed by a square-KKT polish. Throws on
/// non-convergence; coincident centers are reported as a degenerate overlap.
inline SdfResult solve_sdf(const Matrix2d& P1_hat, const Pose& pose1, const Matrix2d& P2_hat,
                           const Pose& pose2) {
  detail::SdfProblem prob;
  prob.P1 = ellipse_matrix(P1_hat, pose1.theta);
  prob.P2 = ellipse_matrix(P2_hat, pose2.theta);
  prob.p1 = pose1.p;
  prob.p2 = pose2.p;

  SdfResult out;
  if ((prob.p1 - prob.p2).norm() < 1e-12) {
    out.sdf.alpha = 0.0;
    out.sdf.p_d = prob.p1;
    out.sdf.mu = Eigen::Vector2d(0.5, 0.5);
    out.gap = -1.0;
    out.degenerate = true;
    return out;
  }

  // Strictly feasible start.
  Vector2d pd = 0.5 * (prob.p1 + prob.p2);
  double alpha = std::max(prob.f(0, pd), prob.f(1, pd)) + 1.0;
  int iters = 0;

  // Barrier phase: min alpha - tau * sum_i log(alpha - f_i).
  for (double tau = 1.0; tau > 1e-11; tau *= 0.15) {
    for (int newton = 0; newton < 25; ++newton) {
      const double s0 = alpha - prob.f(0, pd);
      const double s1 = alpha - prob.f(1, pd);
      const double w0 = tau / s0, w1 = tau / s1;
      const Vector2d g0 = prob.grad_f(0, pd), g1 = prob.grad_f(1, pd);

      Eigen::Vector3d grad;
      grad(0) = 1.0 - w0 - w1;
      grad.tail<2>() = w0 * g0 + w1 * g1;

      Eigen::Matrix3d H;
      const double q0 = w0 * w0 / tau, q1 = w1 * w1 / tau;
      H(0, 0) = q0 + q1;
      H.block<1, 2>(0, 1) = -(q0 * g0 + q1 * g1).transpose();
      H.block<2, 1>(1, 0) = H.block<1, 2>(0, 1).transpose();
      H.block<2, 2>(1, 1) = q0 * g0 * g0.transpose() + q1 * g1 * g1.transpose() +
                            2.0 * (w0 * prob.P1 + w1 * prob.P2);

      const Eigen::Vector3d step = H.ldlt().solve(-grad);
      if (!step.allFinite()) break;
      // Damped update keeping the barrier domain.
      double t = 1.0;
      for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
        const double a_try = alpha + t * step(0);
        const Vector2d pd_try = pd + t * step.tail<2>();
        if (a_try - prob.f(0, pd_try) > 0.0 && a_try - prob.f(1, pd_try) > 0.0) {
          alpha = a_try;
          pd = pd_try;
          break;
        }
      }
      ++iters;
      if (iters > 100 * 40) throw std::runtime_error("solve_sdf: iteration budget exceeded");
      if (grad.norm() < 1e-2 * tau + 1e-13) break;
    }
  }

  // KKT polish: both constraints are active away from the degenerate case.
  // Unknowns (alpha, p_d, mu); residual (stationarity in alpha and p_d,
  // activity of both constraints).
  const double s0 = alpha - prob.f(0, pd);
  const double s1 = alpha - prob.f(1, pd);
  Eigen::Vector2d mu(1e-11 / std::max(s0, 1e-14), 1e-11 / std::max(s1, 1e-14));
  const double msum = mu(0) + mu(1);
  if (msum > 0) mu /= msum;

  Eigen::Matrix<double, 5, 1> z;
  z << alpha, pd(0), pd(1), mu(0), mu(1);
  double res = std::numeric_limits<double>::infinity();
  for (int newton = 0; newton < 100; ++newton) {
    const double a = z(0);
    const Vector2d q(z(1), z(2));
    const Eigen::Vector2d m(z(3), z(4));
    const Vector2d g0 = prob.grad_f(0, q), g1 = prob.grad_f(1, q);

    Eigen::Matrix<double, 5, 1> F;
    F(0) = 1.0 - m(0) - m(1);
    F.segment<2>(1) = m(0) * g0 + m(1) * g1;
    F(3) = a - prob.f(0, q);
    F(4) = a - prob.f(1, q);
    res = F.lpNorm<Eigen::Infinity>();
    if (res < 1e-12) break;

    Eigen::Matrix<double, 5, 5> Jm = Eigen::Matrix<double, 5, 5>::Zero();
    Jm(0, 3) = -1.0;
    Jm(0, 4) = -1.0;
    Jm.block<2, 2>(1, 1) = 2.0 * (m(0) * prob.P1 + m(1) * prob.P2);
    Jm.block<2, 1>(1, 3) = g0;
    Jm.block<2, 1>(1, 4) = g1;
    Jm(3, 0) = 1.0;
    Jm.block<1, 2>(3, 1) = -g0.transpose();
    Jm(4, 0) = 1.0;
    Jm.block<1, 2>(4, 1) = -g1.transpose();

    const Eigen::Matrix<double, 5, 1> step = Jm.fullPivLu().solve(-F);
    if (!step.allFinite()) break;
    z += step;
    ++iters;
  }

  out.sdf.alpha = z(0);
  out.sdf.p_d = Vector2d(z(1), z(2));
  out.sdf.mu = Eigen::Vector2d(z(3), z(4));
  out.gap = z(0) - 1.0;
  out.iterations = iters;
  out.kkt_residual = res;
  if (!(res <= 1e-10))
    throw std::runtime_error("solve_sdf: KKT residual " + std::to_string(res) +
                             " did not reach 1e-10");
  return out;
}

/// Lifts a disc to ellipse form P_hat = r^-2 I.
inline Matrix2d disc_as_ellipse(double radius) {
  return Matrix2d::Identity() / (radius * radius);
}

// ---------------------------------------------------------------------------
// Gradient of the implicit gap (envelope theorem) and contact frames
// ---------------------------------------------------------------------------

/// Blocks of d_n = grad_x c(x) for one ellipse contact: per body a position
/// block and a rotation block (the latter is only meaningful for bodies with a
/// rotation coordinate).
struct NormalGradient {
  Vector2d dp1 = Vector2d::Zero();
  Vector2d dp2 = Vector2d::Zero();
  double dtheta1 = 0.0;
  double dtheta2 = 0.0;
};

inline NormalGradient contact_normal_gradient(const Matrix2d& P1_hat, const Pose& pose1,
                                              const Matrix2d& P2_hat, const Pose& pose2,
                                              const SdfAlgebraic& sdf) {
  NormalGradient g;
  const Matrix2d P1 = ellipse_matrix(P1_hat, pose1.theta);
  const Matrix2d P2 = ellipse_matrix(P2_hat, pose2.theta);
  const Vector2d d1 = sdf.p_d - pose1.p;
  const Vector2d d2 = sdf.p_d - pose2.p;
  g.dp1 = -2.0 * sdf.mu(0) * P1 * d1;
  g.dp2 = -2.0 * sdf.mu(1) * P2 * d2;
  g.dtheta1 = sdf.mu(0) * d1.dot(ellipse_matrix_dtheta(P1_hat, pose1.theta) * d1);
  g.dtheta2 = sdf.mu(1) * d2.dot(ellipse_matrix_dtheta(P2_hat, pose2.theta) * d2);
  return g;
}

/// Unit contact normal/tangent and per-body lever arms. The normal is the
/// normalized planar gradient block of body 2 (for discs it points from body 1
/// toward body 2); the tangent is the counterclockwise quarter turn of the
/// normal. Levers are zero for bodies without a rotation coordinate.
struct ContactFrame {
  Vector2d n_hat = Vector2d::Zero();
  Vector2d t_hat = Vector2d::Zero();
  double lever1 = 0.0;
  double lever2 = 0.0;
};

inline ContactFrame contact_frame(const NormalGradient& grad, const Vector2d& p_d,
                                  const Pose& pose1, bool rot1, const Pose& pose2, bool rot2) {
  ContactFrame f;
  const double n = grad.dp2.norm();
  if (n < 1e-12) throw std::runtime_error("contact_frame: degenerate contact (vanishing gradient)");
  f.n_hat = grad.dp2 / n;
  f.t_hat = Vector2d(-f.n_hat(1), f.n_hat(0));
  f.lever1 = rot1 ? (p_d - pose1.p).norm() : 0.0;
  f.lever2 = rot2 ? (p_d - pose2.p).norm() : 0.0;
  return f;
}

// ---------------------------------------------------------------------------
// Symbolic builders (expression-graph counterparts used by the DCS assembly)
// ---------------------------------------------------------------------------

namespace sym {

using expr::Expr;
using expr::Graph;

struct Vec2 {
  Expr x, y;
};

inline Expr dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

/// Symbolic 2x2 matrix.
struct Mat2 {
  Expr m00, m01, m10, m11;
  Vec2 apply(Vec2 v) const { return {m00 * v.x + m01 * v.y, m10 * v.x + m11 * v.y}; }
};

/// P(theta) entries as expressions; theta may be absent (fixed rotation 0).
inline Mat2 ellipse_matrix_sym(Graph& g, const Matrix2d& P_hat, std::optional<Expr> theta) {
  if (!theta) {
    Expr a{g, g.constant(P_hat(0, 0))}, b{g, g.constant(P_hat(0, 1))};
    Expr c{g, g.constant(P_hat(1, 0))}, d{g, g.constant(P_hat(1, 1))};
    return {a, b, c, d};
  }
  const Expr ct = cos(*theta), st = sin(*theta);
  // R' P R with R = [[c,-s],[s,c]].
  const double a = P_hat(0, 0), b = P_hat(0, 1), d = P_hat(1, 1);
  // Expand entries directly (P_hat symmetric).
  const Expr cc = ct * ct, ss = st * st, cs = ct * st;
  Mat2 P;
  P.m00 = a * cc + 2.0 * b * cs + d * ss;
  P.m01 = b * (cc - ss) + (d - a) * cs;
  P.m10 = P.m01;
  P.m11 = a * ss - 2.0 * b * cs + d * cc;
  return P;
}

/// dP/dtheta entries as expressions.
inline Mat2 ellipse_matrix_dtheta_sym(Graph& g, const Matrix2d& P_hat, Expr theta) {
  const Expr ct = cos(theta), st = sin(theta);
  const double a = P_hat(0, 0), b = P_hat(0, 1), d = P_hat(1, 1);
  // Differentiate the expanded entries: d(cc)=-2cs, d(ss)=2cs, d(cs)=cc-ss.
  const Expr cc_ss = ct * ct - st * st;  // cos(2t)
  const Expr two_cs = 2.0 * (ct * st);   // sin(2t)
  Mat2 dP;
  dP.m00 = -a * two_cs + 2.0 * b * cc_ss + d * two_cs;
  dP.m01 = b * (-2.0 * two_cs) + (d - a) * cc_ss;
  dP.m10 = dP.m01;
  dP.m11 = a * two_cs - 2.0 * b * cc_ss - d * two_cs;
  return dP;
}

/// Pose variables of one body inside a template graph.
struct BodyVars {
  Vec2 p;
  std::optional<Expr> theta;
};

/// Everything the DCS needs for one ellipse-ellipse (or lifted disc) contact.
struct EllipseContactSym {
  Expr gap;                       // c = alpha - 1
  std::array<Expr, 3> equalities; // 1 - mu1 - mu2, stationarity x, stationarity y
  std::array<Expr, 2> comp_G;     // alpha - f_i, paired with mu_i
  // d_n blocks aligned with [p1, theta1?, p2, theta2?].
  Vec2 dn_p1, dn_p2;
  std::optional<Expr> dn_th1, dn_th2;
  // Contact frame.
  Vec2 n_hat, t_hat;
  Expr lever1, lever2;
};

/// Builds the KKT-embedded SDF, the envelope-theorem gap gradient, and the
/// contact frame for a pair of ellipse-form bodies.
inline EllipseContactSym build_ellipse_contact(Graph& g, const Matrix2d& P1_hat, BodyVars b1,
                                               const Matrix2d& P2_hat, BodyVars b2, Expr alpha,
                                               Vec2 p_d, Expr mu1, Expr mu2) {
  EllipseContactSym out;
  const Mat2 P1 = ellipse_matrix_sym(g, P1_hat, b1.theta);
  const Mat2 P2 = ellipse_matrix_sym(g, P2_hat, b2.theta);
  const Vec2 d1{p_d.x - b1.p.x, p_d.y - b1.p.y};
  const Vec2 d2{p_d.x - b2.p.x, p_d.y - b2.p.y};
  const Vec2 P1d1 = P1.apply(d1);
  const Vec2 P2d2 = P2.apply(d2);
  const Expr f1 = dot(d1, P1d1);
  const Expr f2 = dot(d2, P2d2);

  out.gap = alpha - 1.0;
  out.equalities[0] = 1.0 - mu1 - mu2;
  out.equalities[1] = 2.0 * (mu1 * P1d1.x) + 2.0 * (mu2 * P2d2.x);
  out.equalities[2] = 2.0 * (mu1 * P1d1.y) + 2.0 * (mu2 * P2d2.y);
  out.comp_G = {alpha - f1, alpha - f2};

  out.dn_p1 = {-2.0 * (mu1 * P1d1.x), -2.0 * (mu1 * P1d1.y)};
  out.dn_p2 = {-2.0 * (mu2 * P2d2.x), -2.0 * (mu2 * P2d2.y)};
  if (b1.theta) {
    const Mat2 dP1 = ellipse_matrix_dtheta_sym(g, P1_hat, *b1.theta);
    out.dn_th1 = mu1 * dot(d1, dP1.apply(d1));
  }
  if (b2.theta) {
    const Mat2 dP2 = ellipse_matrix_dtheta_sym(g, P2_hat, *b2.theta);
    out.dn_th2 = mu2 * dot(d2, dP2.apply(d2));
  }

  // Frame from the planar gradient block of body 2.
  const Vec2 g2 = out.dn_p2;
  const Expr norm = sqrt(g2.x * g2.x + g2.y * g2.y);
  out.n_hat = {g2.x / norm, g2.y / norm};
  out.t_hat = {Expr{g, g.neg(out.n_hat.y.id)}, out.n_hat.x};
  out.lever1 = b1.theta ? sqrt(d1.x * d1.x + d1.y * d1.y) : Expr{g, g.constant(0.0)};
  out.lever2 = b2.theta ? sqrt(d2.x * d2.x + d2.y * d2.y) : Expr{g, g.constant(0.0)};
  return out;
}

/// Disc-disc contact: closed-form squared-distance gap, gradient, and frame.
struct DiscContactSym {
  Expr gap;  // |p1-p2|^2 - (r1+r2)^2
  Vec2 dn_p1, dn_p2;
  Vec2 n_hat, t_hat;
};

inline DiscContactSym build_disc_contact(Graph& g, BodyVars b1, double r1, BodyVars b2, double r2) {
  DiscContactSym out;
  const Vec2 diff{b1.p.x - b2.p.x, b1.p.y - b2.p.y};
  const double rsum = r1 + r2;
  out.gap = diff.x * diff.x + diff.y * diff.y - rsum * rsum;
  out.dn_p1 = {2.0 * diff.x, 2.0 * diff.y};
  out.dn_p2 = {-2.0 * diff.x, -2.0 * diff.y};
  const Expr norm = sqrt(out.dn_p2.x * out.dn_p2.x + out.dn_p2.y * out.dn_p2.y);
  out.n_hat = {out.dn_p2.x / norm, out.dn_p2.y / norm};
  out.t_hat = {Expr{g, g.neg(out.n_hat.y.id)}, out.n_hat.x};
  return out;
}

}  // namespace sym

}  // namespace cito::geom
