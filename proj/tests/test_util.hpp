#pragma once

// Shared helpers for the test suites: deterministic RNG wrappers and a
// random expression generator whose outputs are smooth on all of R^n
// (denominators and sqrt arguments are kept strictly positive by
// construction, so finite differencing is valid at any sample point).

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "cito/expr.hpp"

namespace testutil {

using cito::expr::FunctionGraph;
using cito::expr::Graph;
using cito::expr::NodeId;

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Mirror of the expression structure used by the independent tree
/// interpreter oracle. Deliberately separate from cito::expr.
struct TreeNode {
  enum Kind { kConst, kInput, kAdd, kSub, kMul, kDivSafe, kSqrtSafe, kSin, kCos, kPowInt } kind;
  double value = 0.0;  // constant or integer exponent
  int slot = 0;
  std::shared_ptr<TreeNode> a, b;
};

using TreePtr = std::shared_ptr<TreeNode>;

inline TreePtr make_leaf_const(double v) {
  auto n = std::make_shared<TreeNode>();
  n->kind = TreeNode::kConst;
  n->value = v;
  return n;
}

inline TreePtr make_leaf_input(int slot) {
  auto n = std::make_shared<TreeNode>();
  n->kind = TreeNode::kInput;
  n->slot = slot;
  return n;
}

inline TreePtr make_node(TreeNode::Kind kind, TreePtr a, TreePtr b = nullptr, double value = 0.0) {
  auto n = std::make_shared<TreeNode>();
  n->kind = kind;
  n->a = std::move(a);
  n->b = std::move(b);
  n->value = value;
  return n;
}

/// Generates a random smooth expression of roughly `target_nodes` nodes over
/// `input_dim` inputs.
inline TreePtr random_tree(Rng& rng, int input_dim, int target_nodes) {
  std::vector<TreePtr> pool;
  for (int i = 0; i < input_dim; ++i) pool.push_back(make_leaf_input(i));
  pool.push_back(make_leaf_const(uniform(rng, 0.3, 2.0)));
  while (static_cast<int>(pool.size()) < target_nodes) {
    const int pick = uniform_int(rng, 0, 8);
    TreePtr a = pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool.size()) - 1))];
    TreePtr b = pool[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(pool.size()) - 1))];
    TreePtr node;
    switch (pick) {
      case 0: node = make_node(TreeNode::kAdd, a, b); break;
      case 1: node = make_node(TreeNode::kSub, a, b); break;
      case 2: node = make_node(TreeNode::kMul, a, b); break;
      case 3: node = make_node(TreeNode::kDivSafe, a, b); break;   // a / (b^2 + 3/2)
      case 4: node = make_node(TreeNode::kSqrtSafe, a, nullptr); break;  // sqrt(a^2 + 1)
      case 5: node = make_node(TreeNode::kSin, a); break;
      case 6: node = make_node(TreeNode::kCos, a); break;
      case 7: node = make_node(TreeNode::kPowInt, a, nullptr, uniform_int(rng, 2, 3)); break;
      default: node = make_leaf_const(uniform(rng, -1.5, 1.5)); break;
    }
    pool.push_back(node);
  }
  return pool.back();
}

/// Independent recursive interpreter over the tree (the evaluation oracle).
inline double eval_tree(const TreePtr& n, const std::vector<double>& x) {
  switch (n->kind) {
    case TreeNode::kConst: return n->value;
    case TreeNode::kInput: return x[static_cast<std::size_t>(n->slot)];
    case TreeNode::kAdd: return eval_tree(n->a, x) + eval_tree(n->b, x);
    case TreeNode::kSub: return eval_tree(n->a, x) - eval_tree(n->b, x);
    case TreeNode::kMul: return eval_tree(n->a, x) * eval_tree(n->b, x);
    case TreeNode::kDivSafe: {
      const double den = eval_tree(n->b, x);
      return eval_tree(n->a, x) / (den * den + 1.5);
    }
    case TreeNode::kSqrtSafe: {
      const double a = eval_tree(n->a, x);
      return std::sqrt(a * a + 1.0);
    }
    case TreeNode::kSin: return std::sin(eval_tree(n->a, x));
    case TreeNode::kCos: return std::cos(eval_tree(n->a, x));
    case TreeNode::kPowInt: return std::pow(eval_tree(n->a, x), n->value);
  }
  return 0.0;
}

/// Lowers the tree into a cito expression graph, using the same arithmetic
/// structure the interpreter uses.
inline NodeId lower_tree(const TreePtr& n, Graph& g) {
  switch (n->kind) {
    case TreeNode::kConst: return g.constant(n->value);
    case TreeNode::kInput: return g.input(n->slot);
    case TreeNode::kAdd: return g.add(lower_tree(n->a, g), lower_tree(n->b, g));
    case TreeNode::kSub: return g.sub(lower_tree(n->a, g), lower_tree(n->b, g));
    case TreeNode::kMul: return g.mul(lower_tree(n->a, g), lower_tree(n->b, g));
    case TreeNode::kDivSafe: {
      const NodeId num = lower_tree(n->a, g);
      const NodeId den = lower_tree(n->b, g);
      return g.div(num, g.add(g.mul(den, den), g.constant(1.5)));
    }
    case TreeNode::kSqrtSafe: {
      const NodeId a = lower_tree(n->a, g);
      return g.sqrt(g.add(g.mul(a, a), g.constant(1.0)));
    }
    case TreeNode::kSin: return g.sin(lower_tree(n->a, g));
    case TreeNode::kCos: return g.cos(lower_tree(n->a, g));
    case TreeNode::kPowInt: return g.pow(lower_tree(n->a, g), n->value);
  }
  return cito::expr::kInvalidNode;
}

/// Random multi-output smooth function graph.
inline FunctionGraph random_function(Rng& rng, int input_dim, int n_outputs, int nodes_per_output) {
  auto g = std::make_shared<Graph>(input_dim);
  std::vector<NodeId> outs;
  for (int k = 0; k < n_outputs; ++k) {
    TreePtr t = random_tree(rng, input_dim, nodes_per_output);
    outs.push_back(lower_tree(t, *g));
  }
  return FunctionGraph(std::move(g), std::move(outs));
}

inline std::vector<double> random_point(Rng& rng, int dim, double lo = -1.5, double hi = 1.5) {
  std::vector<double> x(static_cast<std::size_t>(dim));
  for (double& v : x) v = uniform(rng, lo, hi);
  return x;
}

}  // namespace testutil
