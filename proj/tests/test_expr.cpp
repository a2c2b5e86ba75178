#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "cito/expr.hpp"
#include "test_util.hpp"

using namespace cito::expr;
using testutil::Rng;

namespace {

// Central finite difference of one FunctionGraph output w.r.t. one input.
double central_diff(const FunctionGraph& f, std::vector<double> x, int row, int col, double h) {
  EvalWorkspace ws;
  x[static_cast<std::size_t>(col)] += h;
  const double up = evaluate(f, x, ws)[static_cast<std::size_t>(row)];
  x[static_cast<std::size_t>(col)] -= 2 * h;
  const double dn = evaluate(f, x, ws)[static_cast<std::size_t>(row)];
  return (up - dn) / (2 * h);
}

std::map<std::pair<int, int>, double> sparse_eval(const SparseFunction& jac,
                                                  const std::vector<double>& x) {
  EvalWorkspace ws;
  const std::vector<double> vals = evaluate(jac.fn, x, ws);
  std::map<std::pair<int, int>, double> out;
  for (std::size_t k = 0; k < vals.size(); ++k) out[jac.pattern[k]] = vals[k];
  return out;
}

}  // namespace

TEST_CASE("evaluate: direct arithmetic") {
  auto g = std::make_shared<Graph>(2);
  const NodeId out = g->add(g->mul(g->input(0), g->input(0)), g->input(1));
  FunctionGraph f(g, {out});
  EvalWorkspace ws;
  const std::vector<double> x{3.0, 1.0};
  CHECK(evaluate(f, x, ws)[0] == 10.0);
}

TEST_CASE("evaluate: identity") {
  auto g = std::make_shared<Graph>(1);
  FunctionGraph f(g, {g->input(0)});
  EvalWorkspace ws;
  const std::vector<double> x{7.0};
  CHECK(evaluate(f, x, ws)[0] == 7.0);
}

TEST_CASE("evaluate: dimension mismatch is an input error") {
  auto g = std::make_shared<Graph>(2);
  FunctionGraph f(g, {g->input(0)});
  EvalWorkspace ws;
  const std::vector<double> x{1.0};
  CHECK_THROWS_AS(evaluate(f, x, ws), std::invalid_argument);
}

TEST_CASE("evaluate: NaN/Inf propagation is flagged") {
  auto g = std::make_shared<Graph>(1);
  FunctionGraph f(g, {g->sqrt(g->input(0))});
  EvalWorkspace ws;
  const std::vector<double> x{-1.0};
  EvalStatus status;
  const auto out = evaluate(f, x, ws, &status);
  CHECK(std::isnan(out[0]));
  CHECK_FALSE(status.all_finite);
}

TEST_CASE("evaluate: random DAGs agree with an independent tree interpreter") {
  Rng rng(20260810);
  for (int trial = 0; trial < 40; ++trial) {
    const int dim = testutil::uniform_int(rng, 1, 4);
    auto tree = testutil::random_tree(rng, dim, 50);
    auto g = std::make_shared<Graph>(dim);
    const NodeId out = testutil::lower_tree(tree, *g);
    FunctionGraph f(g, {out});
    EvalWorkspace ws;
    for (int p = 0; p < 20; ++p) {
      const auto x = testutil::random_point(rng, dim);
      const double expected = testutil::eval_tree(tree, x);
      const double got = evaluate(f, x, ws)[0];
      // Bit-identical: same primitive operations in the same order.
      CHECK(got == expected);
    }
  }
}

TEST_CASE("evaluate: deterministic across repeated calls") {
  Rng rng(99);
  auto f = testutil::random_function(rng, 3, 2, 60);
  const auto x = testutil::random_point(rng, 3);
  EvalWorkspace ws1, ws2;
  const auto a = evaluate(f, x, ws1);
  const auto b = evaluate(f, x, ws2);
  CHECK(a == b);
}

TEST_CASE("jacobian: polynomial derivative") {
  auto g = std::make_shared<Graph>(1);
  FunctionGraph f(g, {g->mul(g->input(0), g->input(0))});
  auto jac = jacobian(f);
  REQUIRE(jac.pattern.size() == 1);
  CHECK(jac.pattern[0] == std::pair<int, int>{0, 0});
  EvalWorkspace ws;
  const std::vector<double> x{3.0};
  CHECK(evaluate(jac.fn, x, ws)[0] == 6.0);
}

TEST_CASE("jacobian: sin at zero") {
  auto g = std::make_shared<Graph>(1);
  FunctionGraph f(g, {g->sin(g->input(0))});
  auto jac = jacobian(f);
  EvalWorkspace ws;
  const std::vector<double> x{0.0};
  CHECK(evaluate(jac.fn, x, ws)[0] == 1.0);
}

TEST_CASE("jacobian: matches central finite differences on random graphs") {
  Rng rng(424242);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = testutil::uniform_int(rng, 1, 4);
    const int n_out = testutil::uniform_int(rng, 1, 3);
    auto f = testutil::random_function(rng, dim, n_out, 40);
    auto jac = jacobian(f);
    const auto x = testutil::random_point(rng, dim);
    const auto entries = sparse_eval(jac, x);
    for (int r = 0; r < n_out; ++r) {
      for (int c = 0; c < dim; ++c) {
        const double fd = central_diff(f, x, r, c, 1e-6);
        const auto it = entries.find({r, c});
        const double exact = it == entries.end() ? 0.0 : it->second;
        const double err = std::abs(exact - fd) / std::max(1.0, std::abs(fd));
        worst = std::max(worst, err);
      }
    }
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("jacobian: sparsity pattern never excludes a numeric nonzero") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int dim = testutil::uniform_int(rng, 2, 4);
    auto f = testutil::random_function(rng, dim, 2, 30);
    auto jac = jacobian(f);
    std::set<std::pair<int, int>> pattern(jac.pattern.begin(), jac.pattern.end());
    for (int p = 0; p < 100; ++p) {
      const auto x = testutil::random_point(rng, dim);
      for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < dim; ++c) {
          if (pattern.count({r, c})) continue;
          const double fd = central_diff(f, x, r, c, 1e-6);
          CHECK(std::abs(fd) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("hessian: quadratic") {
  auto g = std::make_shared<Graph>(1);
  FunctionGraph f(g, {g->mul(g->input(0), g->input(0))});
  auto cons_graph = std::make_shared<Graph>(1);
  FunctionGraph cons(cons_graph, {});
  auto hess = hessian_of_lagrangian(f, cons);
  REQUIRE(hess.pattern.size() == 1);
  CHECK(hess.pattern[0] == std::pair<int, int>{0, 0});
  EvalWorkspace ws;
  const std::vector<double> x{5.0};
  CHECK(evaluate(hess.fn, x, ws)[0] == 2.0);
}

TEST_CASE("hessian: bilinear off-diagonal") {
  auto g = std::make_shared<Graph>(2);
  FunctionGraph f(g, {g->mul(g->input(0), g->input(1))});
  auto cons_graph = std::make_shared<Graph>(2);
  FunctionGraph cons(cons_graph, {});
  auto hess = hessian_of_lagrangian(f, cons);
  REQUIRE(hess.pattern.size() == 1);
  // Lower triangle only: (1, 0).
  CHECK(hess.pattern[0] == std::pair<int, int>{1, 0});
  EvalWorkspace ws;
  const std::vector<double> x{2.0, 3.0};
  CHECK(evaluate(hess.fn, x, ws)[0] == 1.0);
}

TEST_CASE("hessian: lower triangle only, by construction") {
  Rng rng(1234);
  auto obj = testutil::random_function(rng, 4, 1, 50);
  auto cons = testutil::random_function(rng, 4, 3, 30);
  // Rebuild the constraint function over the same input dim (independent arena is fine).
  auto hess = hessian_of_lagrangian(obj, cons);
  for (const auto& [r, c] : hess.pattern) {
    CHECK(r >= c);
    CHECK(c < 4);
  }
}

TEST_CASE("hessian: matches finite differences of the gradient on random problems") {
  Rng rng(5150);
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const int dim = testutil::uniform_int(rng, 1, 4);
    const int m = testutil::uniform_int(rng, 0, 3);
    auto obj = testutil::random_function(rng, dim, 1, 35);
    auto cons = testutil::random_function(rng, dim, m, 25);
    auto hess = hessian_of_lagrangian(obj, cons);
    auto grad_obj = jacobian(obj);
    auto jac_cons = jacobian(cons);

    const auto x = testutil::random_point(rng, dim);
    const auto y = testutil::random_point(rng, m, -2.0, 2.0);
    std::vector<double> xy = x;
    xy.insert(xy.end(), y.begin(), y.end());

    EvalWorkspace ws;
    const auto hvals = evaluate(hess.fn, xy, ws);
    // Assemble dense Hessian from the lower triangle.
    std::vector<std::vector<double>> H(static_cast<std::size_t>(dim),
                                       std::vector<double>(static_cast<std::size_t>(dim), 0.0));
    for (std::size_t k = 0; k < hvals.size(); ++k) {
      const auto [r, c] = hess.pattern[k];
      H[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = hvals[k];
      H[static_cast<std::size_t>(c)][static_cast<std::size_t>(r)] = hvals[k];
    }

    // Finite differences of the exact Lagrangian gradient.
    auto lagrangian_grad = [&](std::vector<double> pt) {
      std::vector<double> grad(static_cast<std::size_t>(dim), 0.0);
      const auto go = sparse_eval(grad_obj, pt);
      for (const auto& [rc, v] : go) grad[static_cast<std::size_t>(rc.second)] += v;
      const auto jc = sparse_eval(jac_cons, pt);
      for (const auto& [rc, v] : jc)
        grad[static_cast<std::size_t>(rc.second)] += y[static_cast<std::size_t>(rc.first)] * v;
      return grad;
    };
    const double h = 1e-6;
    for (int c = 0; c < dim; ++c) {
      auto xp = x, xm = x;
      xp[static_cast<std::size_t>(c)] += h;
      xm[static_cast<std::size_t>(c)] -= h;
      const auto gp = lagrangian_grad(xp);
      const auto gm = lagrangian_grad(xm);
      for (int r = 0; r < dim; ++r) {
        const double fd = (gp[static_cast<std::size_t>(r)] - gm[static_cast<std::size_t>(r)]) / (2 * h);
        const double err =
            std::abs(H[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] - fd) /
            std::max(1.0, std::abs(fd));
        worst = std::max(worst, err);
      }
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("instantiate: stamps a template with remapped inputs") {
  Graph tmpl(2);
  const NodeId t_out = tmpl.add(tmpl.mul(tmpl.input(0), tmpl.input(0)), tmpl.input(1));
  auto big = std::make_shared<Graph>(4);
  const std::vector<NodeId> slots{big->input(2), big->input(3)};
  const auto mapped = instantiate(tmpl, std::vector<NodeId>{t_out}, *big, slots);
  FunctionGraph f(big, mapped);
  EvalWorkspace ws;
  const std::vector<double> x{0.0, 0.0, 3.0, 1.0};
  CHECK(evaluate(f, x, ws)[0] == 10.0);
}
