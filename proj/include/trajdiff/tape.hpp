#ifndef TRAJDIFF_TAPE_HPP
#define TRAJDIFF_TAPE_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "trajdiff/tensor.hpp"

namespace trajdiff::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

// Dynamic reverse-mode tape. Rebuilt for every forward pass. Node ids are
// assigned in creation order, so parents always precede children and a single
// reverse sweep is a valid topological traversal.
class Tape {
 public:
  using Rule = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor v) { return push(std::move(v), {}, nullptr, false); }
  Var parameter(Tensor v) { return push(std::move(v), {}, nullptr, true); }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return node(id).value; }

  // Gradient of the last backward() loss with respect to node id. Nodes the
  // loss does not depend on report zeros.
  Tensor grad(std::size_t id) const {
    const Node& n = node(id);
    return n.has_grad ? n.grad : Tensor(n.value.shape(), 0.0);
  }
  Tensor grad(Var v) const { return grad(v.id); }

  void backward(Var loss) {
    if (loss.tape != this || loss.id >= nodes_.size())
      throw std::invalid_argument("backward: loss node is not on this tape");
    if (!nodes_[loss.id].value.is_scalar())
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(nodes_[loss.id].value.shape()));
    for (Node& n : nodes_) {
      n.has_grad = false;
    }
    Node& root = nodes_[loss.id];
    root.grad = Tensor(root.value.shape(), 1.0);
    root.has_grad = true;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad || !n.rule) continue;
      n.rule(*this, id);
    }
  }

  // Used by op backward rules.
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }
  const Tensor& parent_value(std::size_t id, std::size_t k) const {
    return nodes_[nodes_[id].parents[k]].value;
  }
  bool parent_needs_grad(std::size_t id, std::size_t k) const {
    return nodes_[nodes_[id].parents[k]].needs_grad;
  }
  void accumulate(std::size_t id, std::size_t k, const Tensor& g) {
    Node& p = nodes_[nodes_[id].parents[k]];
    if (!p.needs_grad) return;
    if (!p.has_grad) {
      p.grad = g;
      p.has_grad = true;
    } else {
      kernel::add_inplace(p.grad, g);
    }
  }
  void accumulate_scalar(std::size_t id, std::size_t k, double g) {
    accumulate(id, k, Tensor::scalar(g));
  }

  Var push(Tensor value, std::vector<std::size_t> parents, Rule rule, bool leaf_needs_grad) {
    bool needs = leaf_needs_grad;
    for (std::size_t p : parents) needs = needs || nodes_.at(p).needs_grad;
    nodes_.push_back(Node{std::move(value), Tensor(), std::move(parents),
                          needs ? std::move(rule) : Rule{}, needs, false});
    return Var{this, nodes_.size() - 1};
  }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    Rule rule;
    bool needs_grad;
    bool has_grad;
  };

  const Node& node(std::size_t id) const {
    if (id >= nodes_.size()) throw std::invalid_argument("node not on tape");
    return nodes_[id];
  }

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr)
    throw std::invalid_argument("operands live on different tapes");
  return *a.tape;
}

inline Tensor checked(Tensor t, const char* op) {
  require_finite(t, op);
  return t;
}

// Gradient for an operand that may have been scalar-broadcast.
inline Tensor reduce_to(const Tensor& g, const Tensor& operand) {
  if (operand.same_shape(g)) return g;
  return Tensor::scalar(kernel::sum(g));
}

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Tensor out = detail::checked(kernel::matmul(a.value(), b.value()), "matmul");
  return t.push(std::move(out), {a.id, b.id}, [](Tape& tp, std::size_t id) {
    const Tensor& g = tp.upstream(id);
    if (tp.parent_needs_grad(id, 0)) tp.accumulate(id, 0, kernel::matmul_nt(g, tp.parent_value(id, 1)));
    if (tp.parent_needs_grad(id, 1)) tp.accumulate(id, 1, kernel::matmul_tn(tp.parent_value(id, 0), g));
  }, false);
}

// Equal shapes, or one side scalar.
inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Tensor out = detail::checked(kernel::zip(a.value(), b.value(), std::plus<>{}), "add");
  return t.push(std::move(out), {a.id, b.id}, [](Tape& tp, std::size_t id) {
    const Tensor& g = tp.upstream(id);
    tp.accumulate(id, 0, detail::reduce_to(g, tp.parent_value(id, 0)));
    tp.accumulate(id, 1, detail::reduce_to(g, tp.parent_value(id, 1)));
  }, false);
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Tensor out = detail::checked(kernel::zip(a.value(), b.value(), std::multiplies<>{}), "mul");
  return t.push(std::move(out), {a.id, b.id}, [](Tape& tp, std::size_t id) {
    const Tensor& g = tp.upstream(id);
    const Tensor& x = tp.parent_value(id, 0);
    const Tensor& y = tp.parent_value(id, 1);
    if (tp.parent_needs_grad(id, 0))
      tp.accumulate(id, 0, detail::reduce_to(kernel::zip(g, y, std::multiplies<>{}), x));
    if (tp.parent_needs_grad(id, 1))
      tp.accumulate(id, 1, detail::reduce_to(kernel::zip(g, x, std::multiplies<>{}), y));
  }, false);
}

inline Var scale(Var a, double s) {
  Tensor out = detail::checked(kernel::map(a.value(), [s](double v) { return s * v; }), "scale");
  return a.tape->push(std::move(out), {a.id}, [s](Tape& tp, std::size_t id) {
    tp.accumulate(id, 0, kernel::map(tp.upstream(id), [s](double v) { return s * v; }));
  }, false);
}

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

inline Var activation(Var a) {
  Tensor out = detail::checked(kernel::map(a.value(), kernel::activation), "activation");
  return a.tape->push(std::move(out), {a.id}, [](Tape& tp, std::size_t id) {
    const Tensor& x = tp.parent_value(id, 0);
    tp.accumulate(id, 0, kernel::zip(tp.upstream(id), x, [](double g, double v) {
      return g * kernel::activation_grad(v);
    }));
  }, false);
}

inline Var sigmoid(Var a) {
  Tensor out = detail::checked(kernel::map(a.value(), kernel::sigmoid), "sigmoid");
  return a.tape->push(std::move(out), {a.id}, [](Tape& tp, std::size_t id) {
    const Tensor& s = tp.value(id);
    tp.accumulate(id, 0, kernel::zip(tp.upstream(id), s, [](double g, double v) {
      return g * v * (1.0 - v);
    }));
  }, false);
}

inline Var sum(Var a) {
  Tensor out = detail::checked(Tensor::scalar(kernel::sum(a.value())), "sum");
  return a.tape->push(std::move(out), {a.id}, [](Tape& tp, std::size_t id) {
    tp.accumulate(id, 0, Tensor(tp.parent_value(id, 0).shape(), tp.upstream(id)[0]));
  }, false);
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  Tensor out = detail::checked(Tensor::scalar(kernel::sum(a.value()) / n), "mean");
  return a.tape->push(std::move(out), {a.id}, [n](Tape& tp, std::size_t id) {
    tp.accumulate(id, 0, Tensor(tp.parent_value(id, 0).shape(), tp.upstream(id)[0] / n));
  }, false);
}

// mean((a - b)^2) over every element.
inline Var squared_error(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (!a.value().same_shape(b.value()))
    throw std::invalid_argument("squared_error shape mismatch: " + shape_str(a.value().shape()) +
                                " vs " + shape_str(b.value().shape()));
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - y[i];
    acc += d * d;
  }
  const double n = static_cast<double>(x.size());
  Tensor out = detail::checked(Tensor::scalar(acc / n), "squared_error");
  return t.push(std::move(out), {a.id, b.id}, [n](Tape& tp, std::size_t id) {
    const double g = tp.upstream(id)[0];
    Tensor diff = kernel::zip(tp.parent_value(id, 0), tp.parent_value(id, 1),
                              [g, n](double u, double v) { return 2.0 * g * (u - v) / n; });
    if (tp.parent_needs_grad(id, 1))
      tp.accumulate(id, 1, kernel::map(diff, [](double v) { return -v; }));
    tp.accumulate(id, 0, diff);
  }, false);
}

// Row-wise softmax followed by mean negative log-likelihood of the labels.
inline Var softmax_cross_entropy(Var logits, std::vector<std::size_t> labels) {
  const Tensor& z = logits.value();
  const std::size_t m = z.rows(), k = z.cols();
  if (labels.size() != m) throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  Tensor probs = Tensor::matrix(m, k);
  double loss = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] >= k) throw std::invalid_argument("softmax_cross_entropy: label out of range");
    double mx = z.at(r, 0);
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, z.at(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(z.at(r, c) - mx);
    const double lse = mx + std::log(denom);
    for (std::size_t c = 0; c < k; ++c) probs.at(r, c) = std::exp(z.at(r, c) - lse);
    loss += lse - z.at(r, labels[r]);
  }
  Tensor out = detail::checked(Tensor::scalar(loss / static_cast<double>(m)), "softmax_cross_entropy");
  return logits.tape->push(std::move(out), {logits.id},
                           [probs = std::move(probs), labels = std::move(labels)](Tape& tp, std::size_t id) {
    const double g = tp.upstream(id)[0] / static_cast<double>(labels.size());
    Tensor grad = probs;
    for (std::size_t r = 0; r < labels.size(); ++r) grad.at(r, labels[r]) -= 1.0;
    for (double& v : grad.data()) v *= g;
    tp.accumulate(id, 0, grad);
  }, false);
}

// Two-class softmax cross-entropy with logits [0, z]: mean(softplus(z) - y z).
inline Var logistic_loss(Var logits, std::vector<double> targets) {
  const Tensor& z = logits.value();
  if (targets.size() != z.size()) throw std::invalid_argument("logistic_loss: target count mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) loss += kernel::softplus(z[i]) - targets[i] * z[i];
  Tensor out = detail::checked(Tensor::scalar(loss / static_cast<double>(z.size())), "logistic_loss");
  return logits.tape->push(std::move(out), {logits.id},
                           [targets = std::move(targets)](Tape& tp, std::size_t id) {
    const Tensor& x = tp.parent_value(id, 0);
    const double g = tp.upstream(id)[0] / static_cast<double>(x.size());
    Tensor grad(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) grad[i] = g * (kernel::sigmoid(x[i]) - targets[i]);
    tp.accumulate(id, 0, grad);
  }, false);
}

}  // namespace trajdiff::ad

#endif  // TRAJDIFF_TAPE_HPP
