#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cito::expr {

/// Operation tags. The primitive set is deliberately smooth everywhere on its
/// domain: nonsmooth behavior (abs, max, min) must be expressed through
/// complementarity variables, never through nonsmooth primitives.
enum class Op : std::uint8_t {
  kConst,
  kInput,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kPow,  // fixed real exponent
  kSqrt,
  kSin,
  kCos,
};

using NodeId = std::int32_t;
inline constexpr NodeId kInvalidNode = -1;

namespace detail {
inline std::uint64_t bits_of(double v) {
  std::uint64_t u;
  static_assert(sizeof(u) == sizeof(v));
  std::memcpy(&u, &v, sizeof(u));
  return u;
}
inline std::uint64_t mix_hash(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}
}  // namespace detail

/// Append-only expression DAG. Nodes are stored in topological order (children
/// always precede parents), hash-consed on construction, with constant folding
/// and the usual 0/1 identity folds. Once wrapped in a FunctionGraph the graph
/// is frozen; evaluation uses caller-owned workspaces so one graph can be
/// evaluated concurrently from many threads.
class Graph {
 public:
  explicit Graph(int input_dim) : input_dim_(input_dim) {
    if (input_dim < 0) throw std::invalid_argument("Graph: negative input dimension");
    input_nodes_.assign(static_cast<std::size_t>(input_dim), kInvalidNode);
    rehash(1024);
  }

  int input_dim() const noexcept { return input_dim_; }
  std::size_t size() const noexcept { return ops_.size(); }

  NodeId constant(double value) { return emit(Op::kConst, kInvalidNode, kInvalidNode, value); }

  NodeId input(int slot) {
    if (slot < 0 || slot >= input_dim_)
      throw std::invalid_argument("Graph::input: slot " + std::to_string(slot) +
                                  " out of range (input_dim=" + std::to_string(input_dim_) + ")");
    NodeId& cached = input_nodes_[static_cast<std::size_t>(slot)];
    if (cached == kInvalidNode) cached = push(Op::kInput, slot, kInvalidNode);
    return cached;
  }

  NodeId add(NodeId a, NodeId b) {
    check(a), check(b);
    if (is_const(a) && is_const(b)) return constant(cval(a) + cval(b));
    if (is_const(a) && cval(a) == 0.0) return b;
    if (is_const(b) && cval(b) == 0.0) return a;
    if (b < a) std::swap(a, b);  // canonical order; IEEE addition is commutative
    return emit(Op::kAdd, a, b, 0.0);
  }

  NodeId sub(NodeId a, NodeId b) {
    check(a), check(b);
    if (is_const(a) && is_const(b)) return constant(cval(a) - cval(b));
    if (is_const(b) && cval(b) == 0.0) return a;
    return emit(Op::kSub, a, b, 0.0);
  }

  NodeId mul(NodeId a, NodeId b) {
    check(a), check(b);
    if (is_const(a) && is_const(b)) return constant(cval(a) * cval(b));
    if (is_const(a)) {
      if (cval(a) == 0.0) return constant(0.0);
      if (cval(a) == 1.0) return b;
    }
    if (is_const(b)) {
      if (cval(b) == 0.0) return constant(0.0);
      if (cval(b) == 1.0) return a;
    }
    if (b < a) std::swap(a, b);
    return emit(Op::kMul, a, b, 0.0);
  }

  NodeId div(NodeId a, NodeId b) {
    check(a), check(b);
    if (is_const(a) && is_const(b)) return constant(cval(a) / cval(b));
    if (is_const(b) && cval(b) == 1.0) return a;
    if (is_const(a) && cval(a) == 0.0) return constant(0.0);
    return emit(Op::kDiv, a, b, 0.0);
  }

  NodeId pow(NodeId base, double exponent) {
    check(base);
    if (is_const(base)) return constant(std::pow(cval(base), exponent));
    if (exponent == 0.0) return constant(1.0);
    if (exponent == 1.0) return base;
    return emit(Op::kPow, base, kInvalidNode, exponent);
  }

  NodeId sqrt(NodeId a) {
    check(a);
    if (is_const(a)) return constant(std::sqrt(cval(a)));
    return emit(Op::kSqrt, a, kInvalidNode, 0.0);
  }

  NodeId sin(NodeId a) {
    check(a);
    if (is_const(a)) return constant(std::sin(cval(a)));
    return emit(Op::kSin, a, kInvalidNode, 0.0);
  }

  NodeId cos(NodeId a) {
    check(a);
    if (is_const(a)) return constant(std::cos(cval(a)));
    return emit(Op::kCos, a, kInvalidNode, 0.0);
  }

  NodeId neg(NodeId a) { return mul(constant(-1.0), a); }
  NodeId square(NodeId a) { return mul(a, a); }

  // -- introspection -------------------------------------------------------

  Op op(NodeId id) const { return ops_[static_cast<std::size_t>(id)]; }
  NodeId child_a(NodeId id) const { return a_[static_cast<std::size_t>(id)]; }
  NodeId child_b(NodeId id) const { return b_[static_cast<std::size_t>(id)]; }
  bool is_const(NodeId id) const { return op(id) == Op::kConst; }

  /// Constant payload (kConst) or exponent (kPow).
  double payload(NodeId id) const { return payload_[static_cast<std::size_t>(id)]; }
  double cval(NodeId id) const { return payload(id); }
  int input_slot(NodeId id) const { return a_[static_cast<std::size_t>(id)]; }

  bool is_zero_const(NodeId id) const { return is_const(id) && cval(id) == 0.0; }

 private:
  friend struct EvalWorkspace;

  void check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= ops_.size())
      throw std::invalid_argument("Graph: invalid node id");
  }

  NodeId push(Op op, NodeId a, NodeId b, double payload = 0.0) {
    ops_.push_back(op);
    a_.push_back(a);
    b_.push_back(b);
    payload_.push_back(payload);
    cse_next_.push_back(kInvalidNode);
    return static_cast<NodeId>(ops_.size() - 1);
  }

  std::uint64_t key_hash(Op op, NodeId a, NodeId b, double payload) const {
    std::uint64_t h = static_cast<std::uint64_t>(op) + 1;
    h = detail::mix_hash(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)));
    h = detail::mix_hash(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(b)));
    if (op == Op::kConst || op == Op::kPow) h = detail::mix_hash(h, detail::bits_of(payload));
    return h;
  }

  NodeId emit(Op op, NodeId a, NodeId b, double payload) {
    const std::uint64_t h = key_hash(op, a, b, payload);
    const std::size_t bucket = h & (cse_head_.size() - 1);
    for (NodeId n = cse_head_[bucket]; n != kInvalidNode; n = cse_next_[static_cast<std::size_t>(n)]) {
      const auto i = static_cast<std::size_t>(n);
      if (ops_[i] != op || a_[i] != a || b_[i] != b) continue;
      if ((op == Op::kConst || op == Op::kPow) &&
          detail::bits_of(payload_[i]) != detail::bits_of(payload))
        continue;
      return n;
    }
    const NodeId id = push(op, a, b, payload);
    if (ops_.size() > cse_head_.size() * 3 / 4) {
      rehash(cse_head_.size() * 2);
    } else {
      cse_next_[static_cast<std::size_t>(id)] = cse_head_[bucket];
      cse_head_[bucket] = id;
    }
    return id;
  }

  void rehash(std::size_t buckets) {
    cse_head_.assign(buckets, kInvalidNode);
    for (NodeId id = 0; id < static_cast<NodeId>(ops_.size()); ++id) {
      const auto i = static_cast<std::size_t>(id);
      if (ops_[i] == Op::kInput) continue;
      const std::uint64_t h = key_hash(ops_[i], a_[i], b_[i], payload_[i]);
      const std::size_t bucket = h & (buckets - 1);
      cse_next_[i] = cse_head_[bucket];
      cse_head_[bucket] = id;
    }
  }

  int input_dim_;
  std::vector<Op> ops_;
  std::vector<NodeId> a_, b_;
  std::vector<double> payload_;
  std::vector<NodeId> input_nodes_;
  std::vector<NodeId> cse_head_, cse_next_;
};

/// Convenience handle with operator sugar for model-building code.
struct Expr {
  Graph* g = nullptr;
  NodeId id = kInvalidNode;

  Expr() = default;
  Expr(Graph& graph, NodeId node) : g(&graph), id(node) {}

  bool valid() const noexcept { return g != nullptr && id != kInvalidNode; }
};

inline Expr operator+(Expr a, Expr b) { return {*a.g, a.g->add(a.id, b.id)}; }
inline Expr operator-(Expr a, Expr b) { return {*a.g, a.g->sub(a.id, b.id)}; }
inline Expr operator*(Expr a, Expr b) { return {*a.g, a.g->mul(a.id, b.id)}; }
inline Expr operator/(Expr a, Expr b) { return {*a.g, a.g->div(a.id, b.id)}; }
inline Expr operator+(Expr a, double b) { return {*a.g, a.g->add(a.id, a.g->constant(b))}; }
inline Expr operator-(Expr a, double b) { return {*a.g, a.g->sub(a.id, a.g->constant(b))}; }
inline Expr operator*(Expr a, double b) { return {*a.g, a.g->mul(a.id, a.g->constant(b))}; }
inline Expr operator/(Expr a, double b) { return {*a.g, a.g->div(a.id, a.g->constant(b))}; }
inline Expr operator+(double a, Expr b) { return {*b.g, b.g->add(b.g->constant(a), b.id)}; }
inline Expr operator-(double a, Expr b) { return {*b.g, b.g->sub(b.g->constant(a), b.id)}; }
inline Expr operator*(double a, Expr b) { return {*b.g, b.g->mul(b.g->constant(a), b.id)}; }
inline Expr operator/(double a, Expr b) { return {*b.g, b.g->div(b.g->constant(a), b.id)}; }
inline Expr operator-(Expr a) { return {*a.g, a.g->neg(a.id)}; }
inline Expr sqrt(Expr a) { return {*a.g, a.g->sqrt(a.id)}; }
inline Expr sin(Expr a) { return {*a.g, a.g->sin(a.id)}; }
inline Expr cos(Expr a) { return {*a.g, a.g->cos(a.id)}; }
inline Expr pow(Expr a, double e) { return {*a.g, a.g->pow(a.id, e)}; }
inline Expr square(Expr a) { return {*a.g, a.g->square(a.id)}; }

/// A frozen multi-output function over a shared node arena.
class FunctionGraph {
 public:
  FunctionGraph() = default;
  FunctionGraph(std::shared_ptr<const Graph> graph, std::vector<NodeId> outputs)
      : graph_(std::move(graph)), outputs_(std::move(outputs)) {
    if (!graph_) throw std::invalid_argument("FunctionGraph: null graph");
    for (NodeId id : outputs_)
      if (id < 0 || static_cast<std::size_t>(id) >= graph_->size())
        throw std::invalid_argument("FunctionGraph: output node out of range");
  }

  int input_dim() const { return graph_->input_dim(); }
  std::size_t output_dim() const { return outputs_.size(); }
  const Graph& graph() const { return *graph_; }
  std::shared_ptr<const Graph> shared_graph() const { return graph_; }
  const std::vector<NodeId>& outputs() const { return outputs_; }

 private:
  std::shared_ptr<const Graph> graph_;
  std::vector<NodeId> outputs_;
};

struct EvalStatus {
  bool all_finite = true;
};

/// Caller-owned scratch space; reuse across evaluations of the same graph.
struct EvalWorkspace {
  std::vector<double> values;
};

/// Evaluates every node of the arena once, then gathers the outputs.
/// NaN/Inf propagate through the sweep and are flagged via the returned
/// status when they reach an output.
inline EvalStatus evaluate(const FunctionGraph& f, std::span<const double> point,
                           std::span<double> out, EvalWorkspace& ws) {
  const Graph& g = f.graph();
  if (static_cast<int>(point.size()) != g.input_dim())
    throw std::invalid_argument("evaluate: point has dimension " + std::to_string(point.size()) +
                                ", expected " + std::to_string(g.input_dim()));
  if (out.size() != f.output_dim())
    throw std::invalid_argument("evaluate: output span has wrong dimension");

  ws.values.resize(g.size());
  double* v = ws.values.data();
  const std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i) {
    const NodeId id = static_cast<NodeId>(i);
    switch (g.op(id)) {
      case Op::kConst: v[i] = g.payload(id); break;
      case Op::kInput: v[i] = point[static_cast<std::size_t>(g.input_slot(id))]; break;
      case Op::kAdd: v[i] = v[g.child_a(id)] + v[g.child_b(id)]; break;
      case Op::kSub: v[i] = v[g.child_a(id)] - v[g.child_b(id)]; break;
      case Op::kMul: v[i] = v[g.child_a(id)] * v[g.child_b(id)]; break;
      case Op::kDiv: v[i] = v[g.child_a(id)] / v[g.child_b(id)]; break;
      case Op::kPow: v[i] = std::pow(v[g.child_a(id)], g.payload(id)); break;
      case Op::kSqrt: v[i] = std::sqrt(v[g.child_a(id)]); break;
      case Op::kSin: v[i] = std::sin(v[g.child_a(id)]); break;
      case Op::kCos: v[i] = std::cos(v[g.child_a(id)]); break;
    }
  }
  EvalStatus status;
  const auto& outputs = f.outputs();
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    out[k] = v[static_cast<std::size_t>(outputs[k])];
    if (!std::isfinite(out[k])) status.all_finite = false;
  }
  return status;
}

inline std::vector<double> evaluate(const FunctionGraph& f, std::span<const double> point,
                                    EvalWorkspace& ws, EvalStatus* status = nullptr) {
  std::vector<double> out(f.output_dim());
  EvalStatus s = evaluate(f, point, std::span<double>(out), ws);
  if (status) *status = s;
  return out;
}

/// Copies the sub-DAGs rooted at `roots` from `src` into `dst`, replacing
/// input slot k of the source with the destination node `slot_to_node[k]`.
/// Returns the destination ids of the roots. Used to stamp per-stage copies
/// of a model template into a transcription graph.
inline std::vector<NodeId> instantiate(const Graph& src, std::span<const NodeId> roots, Graph& dst,
                                       std::span<const NodeId> slot_to_node) {
  if (static_cast<int>(slot_to_node.size()) != src.input_dim())
    throw std::invalid_argument("instantiate: slot map has wrong dimension");
  std::vector<NodeId> map(src.size(), kInvalidNode);
  std::vector<NodeId> stack;
  for (NodeId root : roots) stack.push_back(root);
  // Post-order iterative copy.
  while (!stack.empty()) {
    const NodeId id = stack.back();
    if (map[static_cast<std::size_t>(id)] != kInvalidNode) {
      stack.pop_back();
      continue;
    }
    const Op op = src.op(id);
    if (op == Op::kConst) {
      map[static_cast<std::size_t>(id)] = dst.constant(src.payload(id));
      stack.pop_back();
      continue;
    }
    if (op == Op::kInput) {
      map[static_cast<std::size_t>(id)] = slot_to_node[static_cast<std::size_t>(src.input_slot(id))];
      stack.pop_back();
      continue;
    }
    const NodeId a = src.child_a(id);
    const NodeId b = src.child_b(id);
    bool ready = true;
    if (map[static_cast<std::size_t>(a)] == kInvalidNode) {
      stack.push_back(a);
      ready = false;
    }
    if (b != kInvalidNode && map[static_cast<std::size_t>(b)] == kInvalidNode) {
      stack.push_back(b);
      ready = false;
    }
    if (!ready) continue;
    const NodeId ca = map[static_cast<std::size_t>(a)];
    const NodeId cb = b != kInvalidNode ? map[static_cast<std::size_t>(b)] : kInvalidNode;
    NodeId copy = kInvalidNode;
    switch (op) {
      case Op::kAdd: copy = dst.add(ca, cb); break;
      case Op::kSub: copy = dst.sub(ca, cb); break;
      case Op::kMul: copy = dst.mul(ca, cb); break;
      case Op::kDiv: copy = dst.div(ca, cb); break;
      case Op::kPow: copy = dst.pow(ca, src.payload(id)); break;
      case Op::kSqrt: copy = dst.sqrt(ca); break;
      case Op::kSin: copy = dst.sin(ca); break;
      case Op::kCos: copy = dst.cos(ca); break;
      default: throw std::logic_error("instantiate: unexpected op");
    }
    map[static_cast<std::size_t>(id)] = copy;
    stack.pop_back();
  }
  std::vector<NodeId> out;
  out.reserve(roots.size());
  for (NodeId root : roots) out.push_back(map[static_cast<std::size_t>(root)]);
  return out;
}

/// First-derivative function: outputs are the structurally nonzero entries of
/// the Jacobian, addressed by `pattern` (row, col). The pattern is a superset
/// of the numerically nonzero set at every point.
struct SparseFunction {
  FunctionGraph fn;
  std::vector<std::pair<int, int>> pattern;
};

/// Lower-triangle Hessian-of-Lagrangian function. Inputs are the primal point
/// followed by one multiplier per constraint output; outputs are the entries
/// addressed by `pattern` with row >= col.
struct SparseSymmetricFunction {
  FunctionGraph fn;
  std::vector<std::pair<int, int>> pattern;
  int num_primal = 0;
  int num_multipliers = 0;
};

namespace detail {

/// Per-output reverse sweep machinery shared by jacobian() and the gradient
/// stage of hessian_of_lagrangian(). Builds adjoint expressions in `dst` for
/// the sub-DAG below one output, given a premade forward copy map.
class ReverseBuilder {
 public:
  ReverseBuilder(const Graph& src, Graph& dst, const std::vector<NodeId>& fwd)
      : src_(src), dst_(dst), fwd_(fwd) {
    stamp_.assign(src.size(), -1);
    visit_stamp_.assign(src.size(), -1);
    adj_.assign(src.size(), kInvalidNode);
    anc_.reserve(256);
  }

  /// Runs one reverse pass seeded at `output`; afterwards partials-by-input
  /// can be read through adjoint_of_input(). `epoch` must strictly increase
  /// across calls.
  void run(NodeId output, int epoch) {
    epoch_ = epoch;
    anc_.clear();
    collect(output);
    std::sort(anc_.begin(), anc_.end());
    set_adj(output, dst_.constant(1.0));
    for (std::size_t k = anc_.size(); k-- > 0;) {
      const NodeId id = anc_[k];
      const NodeId g = adjoint(id);
      if (g == kInvalidNode) continue;
      propagate(id, g);
    }
  }

  NodeId adjoint(NodeId src_node) const {
    const auto i = static_cast<std::size_t>(src_node);
    return stamp_[i] == epoch_ ? adj_[i] : kInvalidNode;
  }

  const std::vector<NodeId>& ancestors() const { return anc_; }

 private:
  void collect(NodeId root) {
    stack_.clear();
    stack_.push_back(root);
    while (!stack_.empty()) {
      const NodeId id = stack_.back();
      stack_.pop_back();
      const auto i = static_cast<std::size_t>(id);
      if (visit_stamp_[i] == epoch_) continue;
      visit_stamp_[i] = epoch_;
      anc_.push_back(id);
      const Op op = src_.op(id);
      if (op == Op::kConst || op == Op::kInput) continue;
      stack_.push_back(src_.child_a(id));
      if (src_.child_b(id) != kInvalidNode) stack_.push_back(src_.child_b(id));
    }
  }

  void set_adj(NodeId src_node, NodeId value) {
    const auto i = static_cast<std::size_t>(src_node);
    stamp_[i] = epoch_;
    adj_[i] = value;
  }

  void accumulate(NodeId src_node, NodeId term) {
    const NodeId cur = adjoint(src_node);
    set_adj(src_node, cur == kInvalidNode ? term : dst_.add(cur, term));
  }

  void propagate(NodeId id, NodeId g) {
    const Op op = src_.op(id);
    const NodeId a = src_.child_a(id);
    const NodeId b = src_.child_b(id);
    switch (op) {
      case Op::kConst:
      case Op::kInput:
        break;
      case Op::kAdd:
        accumulate(a, g);
        accumulate(b, g);
        break;
      case Op::kSub:
        accumulate(a, g);
        accumulate(b, dst_.neg(g));
        break;
      case Op::kMul:
        accumulate(a, dst_.mul(g, fwd_[static_cast<std::size_t>(b)]));
        accumulate(b, dst_.mul(g, fwd_[static_cast<std::size_t>(a)]));
        break;
      case Op::kDiv: {
        const NodeId fb = fwd_[static_cast<std::size_t>(b)];
        const NodeId fn = fwd_[static_cast<std::size_t>(id)];
        accumulate(a, dst_.div(g, fb));
        accumulate(b, dst_.neg(dst_.div(dst_.mul(g, fn), fb)));
        break;
      }
      case Op::kPow: {
        const double e = src_.payload(id);
        const NodeId fa = fwd_[static_cast<std::size_t>(a)];
        NodeId dpow;
        if (e == 2.0) {
          dpow = dst_.mul(dst_.constant(2.0), fa);
        } else {
          dpow = dst_.mul(dst_.constant(e), dst_.pow(fa, e - 1.0));
        }
        accumulate(a, dst_.mul(g, dpow));
        break;
      }
      case Op::kSqrt: {
        const NodeId fn = fwd_[static_cast<std::size_t>(id)];
        accumulate(a, dst_.div(dst_.mul(dst_.constant(0.5), g), fn));
        break;
      }
      case Op::kSin:
        accumulate(a, dst_.mul(g, dst_.cos(fwd_[static_cast<std::size_t>(a)])));
        break;
      case Op::kCos:
        accumulate(a, dst_.neg(dst_.mul(g, dst_.sin(fwd_[static_cast<std::size_t>(a)]))));
        break;
    }
  }

  const Graph& src_;
  Graph& dst_;
  const std::vector<NodeId>& fwd_;
  std::vector<int> stamp_, visit_stamp_;
  std::vector<NodeId> adj_;
  std::vector<NodeId> anc_, stack_;
  int epoch_ = -1;
};

/// Copies all of `src` into `dst` 1:1 (inputs map to the same slots).
inline std::vector<NodeId> copy_full(const Graph& src, Graph& dst) {
  std::vector<NodeId> map(src.size(), kInvalidNode);
  for (NodeId id = 0; id < static_cast<NodeId>(src.size()); ++id) {
    const auto i = static_cast<std::size_t>(id);
    switch (src.op(id)) {
      case Op::kConst: map[i] = dst.constant(src.payload(id)); break;
      case Op::kInput: map[i] = dst.input(src.input_slot(id)); break;
      case Op::kAdd: map[i] = dst.add(map[src.child_a(id)], map[src.child_b(id)]); break;
      case Op::kSub: map[i] = dst.sub(map[src.child_a(id)], map[src.child_b(id)]); break;
      case Op::kMul: map[i] = dst.mul(map[src.child_a(id)], map[src.child_b(id)]); break;
      case Op::kDiv: map[i] = dst.div(map[src.child_a(id)], map[src.child_b(id)]); break;
      case Op::kPow: map[i] = dst.pow(map[src.child_a(id)], src.payload(id)); break;
      case Op::kSqrt: map[i] = dst.sqrt(map[src.child_a(id)]); break;
      case Op::kSin: map[i] = dst.sin(map[src.child_a(id)]); break;
      case Op::kCos: map[i] = dst.cos(map[src.child_a(id)]); break;
    }
  }
  return map;
}

}  // namespace detail

/// Reverse-mode Jacobian as a derivative graph. Output k holds entry
/// pattern[k] = (row, col); rows appear in output order, columns ascending
/// within a row.
inline SparseFunction jacobian(const FunctionGraph& f) {
  const Graph& src = f.graph();
  auto dst = std::make_shared<Graph>(src.input_dim());
  const std::vector<NodeId> fwd = detail::copy_full(src, *dst);

  detail::ReverseBuilder rb(src, *dst, fwd);
  std::vector<NodeId> outs;
  std::vector<std::pair<int, int>> pattern;
  std::vector<std::pair<int, NodeId>> cols;  // (input slot, adjoint node)

  int epoch = 0;
  for (std::size_t r = 0; r < f.outputs().size(); ++r) {
    rb.run(f.outputs()[r], epoch++);
    cols.clear();
    for (NodeId id : rb.ancestors()) {
      if (src.op(id) != Op::kInput) continue;
      const NodeId adj = rb.adjoint(id);
      if (adj == kInvalidNode) continue;
      if (dst->is_zero_const(adj)) continue;
      cols.emplace_back(src.input_slot(id), adj);
    }
    std::sort(cols.begin(), cols.end());
    for (const auto& [slot, adj] : cols) {
      pattern.emplace_back(static_cast<int>(r), slot);
      outs.push_back(adj);
    }
  }
  SparseFunction out;
  out.fn = FunctionGraph(std::move(dst), std::move(outs));
  out.pattern = std::move(pattern);
  return out;
}

/// Exact lower-triangle Hessian of objective(x) + sum_r y_r * constraints_r(x),
/// built forward-over-reverse: a reverse pass produces the gradient graph, a
/// symbolic forward (tangent) pass per seed column extracts second derivatives.
/// The result takes (x, y) stacked as input.
inline SparseSymmetricFunction hessian_of_lagrangian(const FunctionGraph& objective,
                                                     const FunctionGraph& constraints) {
  if (objective.output_dim() != 1)
    throw std::invalid_argument("hessian_of_lagrangian: objective must have one output");
  if (objective.input_dim() != constraints.input_dim())
    throw std::invalid_argument("hessian_of_lagrangian: input dimensions disagree");
  const int n = objective.input_dim();
  const int m = static_cast<int>(constraints.output_dim());

  // Lagrangian graph over (x, y).
  Graph lag(n + m);
  std::vector<NodeId> slot_map(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) slot_map[static_cast<std::size_t>(i)] = lag.input(i);
  const std::vector<NodeId> f_out =
      instantiate(objective.graph(), objective.outputs(), lag, slot_map);
  const std::vector<NodeId> g_out =
      instantiate(constraints.graph(), constraints.outputs(), lag, slot_map);
  // Balanced sum keeps the DAG shallow on large transcriptions.
  std::vector<NodeId> terms;
  terms.reserve(static_cast<std::size_t>(m) + 1);
  terms.push_back(f_out[0]);
  for (int r = 0; r < m; ++r) terms.push_back(lag.mul(lag.input(n + r), g_out[static_cast<std::size_t>(r)]));
  while (terms.size() > 1) {
    std::vector<NodeId> next;
    next.reserve(terms.size() / 2 + 1);
    for (std::size_t i = 0; i + 1 < terms.size(); i += 2) next.push_back(lag.add(terms[i], terms[i + 1]));
    if (terms.size() % 2 == 1) next.push_back(terms.back());
    terms.swap(next);
  }
  const NodeId lag_out = terms[0];

  // Gradient graph (forward copy of the Lagrangian + one reverse pass).
  auto grad = std::make_shared<Graph>(n + m);
  {
    const std::vector<NodeId> fwd = detail::copy_full(lag, *grad);
    detail::ReverseBuilder rb(lag, *grad, fwd);
    rb.run(lag_out, 0);
    std::vector<std::pair<int, NodeId>> entries;  // (primal slot, gradient node)
    for (NodeId id : rb.ancestors()) {
      if (lag.op(id) != Op::kInput) continue;
      const int slot = lag.input_slot(id);
      if (slot >= n) continue;
      const NodeId adj = rb.adjoint(id);
      if (adj == kInvalidNode || grad->is_zero_const(adj)) continue;
      entries.emplace_back(slot, adj);
    }
    std::sort(entries.begin(), entries.end());

    // Forward (tangent) pass per seed column over the gradient arena.
    Graph& G = *grad;
    const std::size_t N = G.size();
    // Uses lists (CSR) for descendant traversal.
    std::vector<std::int32_t> use_count(N + 1, 0);
    for (NodeId id = 0; id < static_cast<NodeId>(N); ++id) {
      const Op op = G.op(id);
      if (op == Op::kConst || op == Op::kInput) continue;
      ++use_count[static_cast<std::size_t>(G.child_a(id)) + 1];
      if (G.child_b(id) != kInvalidNode) ++use_count[static_cast<std::size_t>(G.child_b(id)) + 1];
    }
    for (std::size_t i = 1; i <= N; ++i) use_count[i] += use_count[i - 1];
    std::vector<NodeId> uses(static_cast<std::size_t>(use_count[N]));
    {
      std::vector<std::int32_t> cursor(use_count.begin(), use_count.end() - 1);
      for (NodeId id = 0; id < static_cast<NodeId>(N); ++id) {
        const Op op = G.op(id);
        if (op == Op::kConst || op == Op::kInput) continue;
        uses[static_cast<std::size_t>(cursor[static_cast<std::size_t>(G.child_a(id))]++)] = id;
        if (G.child_b(id) != kInvalidNode)
          uses[static_cast<std::size_t>(cursor[static_cast<std::size_t>(G.child_b(id))]++)] = id;
      }
    }

    std::vector<int> tan_stamp(N, -1);
    std::vector<int> seen_stamp(N, -1);
    std::vector<NodeId> tan(N, kInvalidNode);
    std::vector<NodeId> worklist, desc;

    auto tangent_of = [&](NodeId id, int epoch) -> NodeId {
      const auto i = static_cast<std::size_t>(id);
      if (i >= tan_stamp.size()) return kInvalidNode;
      return tan_stamp[i] == epoch ? tan[i] : kInvalidNode;
    };
    auto set_tan = [&](NodeId id, NodeId value, int epoch) {
      const auto i = static_cast<std::size_t>(id);
      if (i >= tan_stamp.size()) {
        tan_stamp.resize(i + 1024, -1);
        tan.resize(tan_stamp.size(), kInvalidNode);
      }
      tan_stamp[i] = epoch;
      tan[i] = value;
    };

    std::vector<NodeId> h_outs;
    std::vector<std::pair<int, int>> pattern;

    // Map primal slot -> gradient output node (may be absent).
    std::vector<NodeId> grad_node(static_cast<std::size_t>(n), kInvalidNode);
    for (const auto& [slot, node] : entries) grad_node[static_cast<std::size_t>(slot)] = node;

    int epoch = 0;
    for (int j = 0; j < n; ++j) {
      // Seed tangent at input j and sweep its descendants in id order.
      // Input nodes are memoized, so requesting slot j is idempotent; a
      // fresh node means the slot is unused and the column is empty.
      const NodeId seed = G.input(j);
      if (static_cast<std::size_t>(seed) >= N) continue;
      const int ep = epoch++;
      desc.clear();
      worklist.clear();
      worklist.push_back(seed);
      set_tan(seed, G.constant(1.0), ep);
      seen_stamp[static_cast<std::size_t>(seed)] = ep;
      desc.push_back(seed);
      // Collect descendants via uses (parents always have larger ids).
      {
        std::size_t head = 0;
        while (head < worklist.size()) {
          const NodeId cur = worklist[head++];
          if (static_cast<std::size_t>(cur) >= N) continue;
          const auto lo = static_cast<std::size_t>(use_count[static_cast<std::size_t>(cur)]);
          const auto hi = static_cast<std::size_t>(use_count[static_cast<std::size_t>(cur) + 1]);
          for (std::size_t u = lo; u < hi; ++u) {
            const NodeId parent = uses[u];
            if (seen_stamp[static_cast<std::size_t>(parent)] != ep) {
              seen_stamp[static_cast<std::size_t>(parent)] = ep;
              worklist.push_back(parent);
              desc.push_back(parent);
            }
          }
        }
      }
      std::sort(desc.begin(), desc.end());
      for (NodeId id : desc) {
        if (id == seed) continue;
        const Op op = G.op(id);
        const NodeId a = G.child_a(id);
        const NodeId b = (op == Op::kConst || op == Op::kInput) ? kInvalidNode : G.child_b(id);
        const NodeId ta = (op == Op::kConst || op == Op::kInput) ? kInvalidNode : tangent_of(a, ep);
        const NodeId tb = b != kInvalidNode ? tangent_of(b, ep) : kInvalidNode;
        NodeId t = kInvalidNode;
        switch (op) {
          case Op::kConst:
          case Op::kInput:
            break;
          case Op::kAdd:
            if (ta != kInvalidNode && tb != kInvalidNode) t = G.add(ta, tb);
            else t = ta != kInvalidNode ? ta : tb;
            break;
          case Op::kSub:
            if (ta != kInvalidNode && tb != kInvalidNode) t = G.sub(ta, tb);
            else if (ta != kInvalidNode) t = ta;
            else t = G.neg(tb);
            break;
          case Op::kMul: {
            NodeId left = ta != kInvalidNode ? G.mul(ta, b) : kInvalidNode;
            NodeId right = tb != kInvalidNode ? G.mul(tb, a) : kInvalidNode;
            t = (left != kInvalidNode && right != kInvalidNode) ? G.add(left, right)
                                                                : (left != kInvalidNode ? left : right);
            break;
          }
          case Op::kDiv: {
            // d(a/b) = ta/b - tb*a/b^2 = (ta - tb*(a/b)) / b
            NodeId num = kInvalidNode;
            if (ta != kInvalidNode) num = ta;
            if (tb != kInvalidNode) {
              const NodeId corr = G.mul(tb, id);  // tb * (a/b)
              num = num == kInvalidNode ? G.neg(corr) : G.sub(num, corr);
            }
            if (num != kInvalidNode) t = G.div(num, b);
            break;
          }
          case Op::kPow: {
            if (ta != kInvalidNode) {
              const double e = G.payload(id);
              NodeId dpow;
              if (e == 2.0) dpow = G.mul(G.constant(2.0), a);
              else dpow = G.mul(G.constant(e), G.pow(a, e - 1.0));
              t = G.mul(ta, dpow);
            }
            break;
          }
          case Op::kSqrt:
            if (ta != kInvalidNode) t = G.div(G.mul(G.constant(0.5), ta), id);
            break;
          case Op::kSin:
            if (ta != kInvalidNode) t = G.mul(ta, G.cos(a));
            break;
          case Op::kCos:
            if (ta != kInvalidNode) t = G.neg(G.mul(ta, G.sin(a)));
            break;
        }
        if (t != kInvalidNode && !G.is_zero_const(t)) set_tan(id, t, ep);
        else set_tan(id, kInvalidNode, ep);
      }
      // Harvest column j of the Hessian, rows i >= j.
      for (int i = j; i < n; ++i) {
        const NodeId gnode = grad_node[static_cast<std::size_t>(i)];
        if (gnode == kInvalidNode) continue;
        const NodeId t = tangent_of(gnode, ep);
        if (t == kInvalidNode || G.is_zero_const(t)) continue;
        pattern.emplace_back(i, j);
        h_outs.push_back(t);
      }
    }

    SparseSymmetricFunction out;
    out.fn = FunctionGraph(std::move(grad), std::move(h_outs));
    out.pattern = std::move(pattern);
    out.num_primal = n;
    out.num_multipliers = m;
    return out;
  }
}

}  // namespace cito::expr
