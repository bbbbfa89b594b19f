#include "pfda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace pfda::ag {

Var make_op(Tensor value, std::vector<NodePtr> parents,
            std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return Var(std::move(n));
}

namespace {

void topo_visit(const NodePtr& n, std::unordered_set<Node*>& seen,
                std::vector<NodePtr>& order) {
  // Iterative DFS; graphs are deep enough (long conv chains) that recursion
  // depth is worth avoiding.
  struct Frame {
    NodePtr node;
    std::size_t next_parent = 0;
  };
  std::vector<Frame> stack;
  if (seen.insert(n.get()).second) stack.push_back({n});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      NodePtr p = f.node->parents[f.next_parent++];
      if (p->requires_grad && seen.insert(p.get()).second) {
        stack.push_back({std::move(p)});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
}

}  // namespace

void backward(const Var& root) {
  require(root.defined(), ErrorKind::Shape, "backward: undefined root");
  require(root.value().size() == 1, ErrorKind::Shape,
          "backward: root must be scalar");
  if (!root.requires_grad()) return;
  std::unordered_set<Node*> seen;
  std::vector<NodePtr> order;
  topo_visit(root.node(), seen, order);
  root.node()->ensure_grad();
  root.node()->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node& n = **it;
    if (n.backward_fn && n.grad.size() == n.value.size()) n.backward_fn(n);
  }
}

namespace {

void check_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.value().same_shape(b.value()), ErrorKind::Shape,
          std::string(op) + ": shape mismatch " + shape_str(a.value().shape()) +
              " vs " + shape_str(b.value().shape()));
}

}  // namespace

Var add(const Var& a, const Var& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.value().shape());
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (int k = 0; k < 2; ++k) {
      Node& p = *self.parents[k];
      if (!p.requires_grad) continue;
      Tensor& g = p.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] - b.value()[i];
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] * b.value()[i];
  return make_op(std::move(out), {a.node(), b.node()}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (self.parents[0]->requires_grad) {
      Tensor& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return make_op(std::move(out), {a.node()}, [s](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Var add_scaled(const Var& a, const Var& b, double sb) {
  check_same_shape(a, b, "add_scaled");
  Tensor out(a.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] + sb * b.value()[i];
  return make_op(std::move(out), {a.node(), b.node()}, [sb](Node& self) {
    if (self.parents[0]->requires_grad) {
      Tensor& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      Tensor& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += sb * self.grad[i];
    }
  });
}

Var relu(const Var& x) {
  Tensor out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.value()[i] > 0.0 ? x.value()[i] : 0.0;
  return make_op(std::move(out), {x.node()}, [](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) g[i] += self.grad[i];
  });
}

Var gelu(const Var& x) {
  Tensor out(x.value().shape());
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.value()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  return make_op(std::move(out), {x.node()}, [](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& g = self.parents[0]->ensure_grad();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.value().size(); ++i) acc += x.value()[i];
  return make_op(Tensor::scalar(acc), {x.node()}, [](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    const double gg = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gg;
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  double acc = 0.0;
  for (std::size_t i = 0; i < x.value().size(); ++i) acc += x.value()[i];
  return make_op(Tensor::scalar(acc / n), {x.node()}, [n](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    const double gg = self.grad[0] / n;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gg;
  });
}

Var select_channel(const Var& x, std::size_t channel) {
  const Shape& s = x.value().shape();
  require(s.size() >= 2, ErrorKind::Shape, "select_channel: rank < 2");
  require(channel < s[1], ErrorKind::Bounds, "select_channel: channel oob");
  const std::size_t b = s[0], k = s[1];
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < s.size(); ++i) spatial *= s[i];
  Shape out_shape;
  out_shape.push_back(b);
  for (std::size_t i = 2; i < s.size(); ++i) out_shape.push_back(s[i]);
  Tensor out(out_shape);
  for (std::size_t ib = 0; ib < b; ++ib) {
    const double* src = x.value().data() + (ib * k + channel) * spatial;
    double* dst = out.data() + ib * spatial;
    std::copy(src, src + spatial, dst);
  }
  return make_op(std::move(out), {x.node()},
                 [b, k, channel, spatial](Node& self) {
                   Tensor& g = self.parents[0]->ensure_grad();
                   for (std::size_t ib = 0; ib < b; ++ib) {
                     double* dst = g.data() + (ib * k + channel) * spatial;
                     const double* src = self.grad.data() + ib * spatial;
                     for (std::size_t i = 0; i < spatial; ++i) dst[i] += src[i];
                   }
                 });
}

Var slice_batch(const Var& x, std::size_t from, std::size_t count) {
  const Shape& s = x.value().shape();
  require(!s.empty() && from + count <= s[0], ErrorKind::Bounds,
          "slice_batch: range out of bounds");
  std::size_t per = 1;
  for (std::size_t i = 1; i < s.size(); ++i) per *= s[i];
  Shape out_shape = s;
  out_shape[0] = count;
  Tensor out(out_shape);
  std::copy(x.value().data() + from * per, x.value().data() + (from + count) * per,
            out.data());
  return make_op(std::move(out), {x.node()}, [from, per](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    const std::size_t n = self.grad.size();
    double* dst = g.data() + from * per;
    for (std::size_t i = 0; i < n; ++i) dst[i] += self.grad[i];
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape& sa = a.value().shape();
  const Shape& sb = b.value().shape();
  require(sa.size() == sb.size() && sa.size() >= 2, ErrorKind::Shape,
          "concat_channels: rank mismatch");
  require(sa[0] == sb[0], ErrorKind::Shape, "concat_channels: batch mismatch");
  for (std::size_t i = 2; i < sa.size(); ++i)
    require(sa[i] == sb[i], ErrorKind::Shape,
            "concat_channels: spatial mismatch");
  const std::size_t batch = sa[0], ca = sa[1], cb = sb[1];
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < sa.size(); ++i) spatial *= sa[i];
  Shape out_shape = sa;
  out_shape[1] = ca + cb;
  Tensor out(out_shape);
  for (std::size_t ib = 0; ib < batch; ++ib) {
    std::copy(a.value().data() + ib * ca * spatial,
              a.value().data() + (ib + 1) * ca * spatial,
              out.data() + ib * (ca + cb) * spatial);
    std::copy(b.value().data() + ib * cb * spatial,
              b.value().data() + (ib + 1) * cb * spatial,
              out.data() + (ib * (ca + cb) + ca) * spatial);
  }
  return make_op(std::move(out), {a.node(), b.node()},
                 [batch, ca, cb, spatial](Node& self) {
                   if (self.parents[0]->requires_grad) {
                     Tensor& g = self.parents[0]->ensure_grad();
                     for (std::size_t ib = 0; ib < batch; ++ib) {
                       const double* src =
                           self.grad.data() + ib * (ca + cb) * spatial;
                       double* dst = g.data() + ib * ca * spatial;
                       for (std::size_t i = 0; i < ca * spatial; ++i)
                         dst[i] += src[i];
                     }
                   }
                   if (self.parents[1]->requires_grad) {
                     Tensor& g = self.parents[1]->ensure_grad();
                     for (std::size_t ib = 0; ib < batch; ++ib) {
                       const double* src =
                           self.grad.data() + (ib * (ca + cb) + ca) * spatial;
                       double* dst = g.data() + ib * cb * spatial;
                       for (std::size_t i = 0; i < cb * spatial; ++i)
                         dst[i] += src[i];
                     }
                   }
                 });
}

Var grl(const Var& x, double lambda) {
  require(lambda >= 0.0, ErrorKind::Config, "grl: lambda must be >= 0");
  Tensor out = x.value();  // identity forward, bit-exact copy
  return make_op(std::move(out), {x.node()}, [lambda](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += -lambda * self.grad[i];
  });
}

Var dropout_mask(const Var& x, Tensor mask) {
  require(mask.same_shape(x.value()), ErrorKind::Shape,
          "dropout_mask: mask shape mismatch");
  Tensor out(x.value().shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.value()[i] * mask[i];
  auto mask_ptr = std::make_shared<Tensor>(std::move(mask));
  return make_op(std::move(out), {x.node()}, [mask_ptr](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * (*mask_ptr)[i];
  });
}

}  // namespace pfda::ag
