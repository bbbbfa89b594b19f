#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "pfda/autodiff.hpp"

namespace pfda::ag {

namespace {

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

}  // namespace

Var batchnorm(const Var& x, const Var& scale, const Var& shift, BnBuffers& buf,
              bool train, bool update_running, double eps, double momentum) {
  const Shape& s = x.value().shape();
  require(s.size() >= 2, ErrorKind::Shape, "batchnorm: rank < 2");
  const std::size_t b = s[0], c = s[1];
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < s.size(); ++i) spatial *= s[i];
  require(scale.value().size() == c && shift.value().size() == c,
          ErrorKind::Shape, "batchnorm: scale/shift size mismatch");
  const std::size_t n = b * spatial;  // reduction count per channel

  auto mean_t = std::make_shared<Tensor>(Shape{c});
  auto invstd_t = std::make_shared<Tensor>(Shape{c});

  if (train) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t ib = 0; ib < b; ++ib) {
        const double* p = x.value().data() + (ib * c + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) acc += p[i];
      }
      const double m = acc / static_cast<double>(n);
      double var = 0.0;
      for (std::size_t ib = 0; ib < b; ++ib) {
        const double* p = x.value().data() + (ib * c + ch) * spatial;
        for (std::size_t i = 0; i < spatial; ++i) {
          const double d = p[i] - m;
          var += d * d;
        }
      }
      var /= static_cast<double>(n);  // biased, used for normalization
      (*mean_t)[ch] = m;
      (*invstd_t)[ch] = 1.0 / std::sqrt(var + eps);
      if (update_running) {
        const double unbiased =
            n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1)
                  : var;
        Tensor& rm = buf.running_mean.mutable_value();
        Tensor& rv = buf.running_var.mutable_value();
        rm[ch] = (1.0 - momentum) * rm[ch] + momentum * m;
        rv[ch] = (1.0 - momentum) * rv[ch] + momentum * unbiased;
      }
    }
  } else {
    const Tensor& rm = buf.running_mean.value();
    const Tensor& rv = buf.running_var.value();
    for (std::size_t ch = 0; ch < c; ++ch) {
      (*mean_t)[ch] = rm[ch];
      (*invstd_t)[ch] = 1.0 / std::sqrt(rv[ch] + eps);
    }
  }

  Tensor out(s);
  for (std::size_t ib = 0; ib < b; ++ib)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double m = (*mean_t)[ch], is = (*invstd_t)[ch];
      const double g = scale.value()[ch], sh = shift.value()[ch];
      const double* p = x.value().data() + (ib * c + ch) * spatial;
      double* q = out.data() + (ib * c + ch) * spatial;
      for (std::size_t i = 0; i < spatial; ++i)
        q[i] = (p[i] - m) * is * g + sh;
    }

  return make_op(
      std::move(out), {x.node(), scale.node(), shift.node()},
      [mean_t, invstd_t, b, c, spatial, n, train](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& sc = self.parents[1]->value;
        const bool need_gx = self.parents[0]->requires_grad;
        Tensor* gx = need_gx ? &self.parents[0]->ensure_grad() : nullptr;
        Tensor* gs = self.parents[1]->requires_grad
                         ? &self.parents[1]->ensure_grad()
                         : nullptr;
        Tensor* gb = self.parents[2]->requires_grad
                         ? &self.parents[2]->ensure_grad()
                         : nullptr;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double m = (*mean_t)[ch], is = (*invstd_t)[ch];
          // Reductions over the channel: sum(dy), sum(dy * xhat).
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t ib = 0; ib < b; ++ib) {
            const double* dy = self.grad.data() + (ib * c + ch) * spatial;
            const double* p = xv.data() + (ib * c + ch) * spatial;
            for (std::size_t i = 0; i < spatial; ++i) {
              const double xhat = (p[i] - m) * is;
              sum_dy += dy[i];
              sum_dy_xhat += dy[i] * xhat;
            }
          }
          if (gs) (*gs)[ch] += sum_dy_xhat;
          if (gb) (*gb)[ch] += sum_dy;
          if (!need_gx) continue;
          const double g = sc[ch];
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t ib = 0; ib < b; ++ib) {
            const double* dy = self.grad.data() + (ib * c + ch) * spatial;
            const double* p = xv.data() + (ib * c + ch) * spatial;
            double* q = gx->data() + (ib * c + ch) * spatial;
            if (train) {
              for (std::size_t i = 0; i < spatial; ++i) {
                const double xhat = (p[i] - m) * is;
                q[i] += g * is *
                        (dy[i] - inv_n * sum_dy - inv_n * xhat * sum_dy_xhat);
              }
            } else {
              for (std::size_t i = 0; i < spatial; ++i) q[i] += g * is * dy[i];
            }
          }
        }
      });
}

Var layernorm(const Var& x, const Var& scale, const Var& shift, double eps) {
  const Shape& s = x.value().shape();
  require(!s.empty(), ErrorKind::Shape, "layernorm: empty shape");
  const std::size_t d = s.back();
  const std::size_t rows = x.value().size() / d;
  require(scale.value().size() == d && shift.value().size() == d,
          ErrorKind::Shape, "layernorm: scale/shift size mismatch");

  auto mean_t = std::make_shared<Tensor>(Shape{rows});
  auto invstd_t = std::make_shared<Tensor>(Shape{rows});
  Tensor out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* p = x.value().data() + r * d;
    double m = 0.0;
    for (std::size_t i = 0; i < d; ++i) m += p[i];
    m /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double dv = p[i] - m;
      var += dv * dv;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*mean_t)[r] = m;
    (*invstd_t)[r] = is;
    double* q = out.data() + r * d;
    for (std::size_t i = 0; i < d; ++i)
      q[i] = (p[i] - m) * is * scale.value()[i] + shift.value()[i];
  }

  return make_op(
      std::move(out), {x.node(), scale.node(), shift.node()},
      [mean_t, invstd_t, rows, d](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& sc = self.parents[1]->value;
        const bool need_gx = self.parents[0]->requires_grad;
        Tensor* gx = need_gx ? &self.parents[0]->ensure_grad() : nullptr;
        Tensor* gs = self.parents[1]->requires_grad
                         ? &self.parents[1]->ensure_grad()
                         : nullptr;
        Tensor* gb = self.parents[2]->requires_grad
                         ? &self.parents[2]->ensure_grad()
                         : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const double m = (*mean_t)[r], is = (*invstd_t)[r];
          const double* p = xv.data() + r * d;
          const double* dy = self.grad.data() + r * d;
          double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
          for (std::size_t i = 0; i < d; ++i) {
            const double xhat = (p[i] - m) * is;
            const double dyg = dy[i] * sc[i];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
            if (gs) (*gs)[i] += dy[i] * xhat;
            if (gb) (*gb)[i] += dy[i];
          }
          if (!need_gx) continue;
          double* q = gx->data() + r * d;
          const double inv_d = 1.0 / static_cast<double>(d);
          for (std::size_t i = 0; i < d; ++i) {
            const double xhat = (p[i] - m) * is;
            q[i] += is * (dy[i] * sc[i] - inv_d * sum_dyg -
                          inv_d * xhat * sum_dyg_xhat);
          }
        }
      });
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const Shape& s = x.value().shape();
  require(!s.empty(), ErrorKind::Shape, "linear: empty shape");
  const std::size_t in = s.back();
  require(w.value().rank() == 2 && w.value().dim(0) == in, ErrorKind::Shape,
          "linear: weight shape mismatch");
  const std::size_t out_dim = w.value().dim(1);
  require(b.value().size() == out_dim, ErrorKind::Shape,
          "linear: bias size mismatch");
  const std::size_t rows = x.value().size() / in;

  Shape out_shape = s;
  out_shape.back() = out_dim;
  Tensor out(out_shape);
  {
    CMapRM xm(x.value().data(), rows, in);
    CMapRM wm(w.value().data(), in, out_dim);
    MapRM om(out.data(), rows, out_dim);
    om.noalias() = xm * wm;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < out_dim; ++j) om(r, j) += b.value()[j];
  }

  return make_op(
      std::move(out), {x.node(), w.node(), b.node()},
      [rows, in, out_dim](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& wv = self.parents[1]->value;
        CMapRM gym(self.grad.data(), rows, out_dim);
        if (self.parents[0]->requires_grad) {
          Tensor& gx = self.parents[0]->ensure_grad();
          MapRM gxm(gx.data(), rows, in);
          CMapRM wm(wv.data(), in, out_dim);
          gxm.noalias() += gym * wm.transpose();
        }
        if (self.parents[1]->requires_grad) {
          Tensor& gw = self.parents[1]->ensure_grad();
          MapRM gwm(gw.data(), in, out_dim);
          CMapRM xm(xv.data(), rows, in);
          gwm.noalias() += xm.transpose() * gym;
        }
        if (self.parents[2]->requires_grad) {
          Tensor& gb = self.parents[2]->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += gym(r, j);
        }
      });
}

namespace {

// Softmax over contiguous runs of length k with stride `stride` between
// elements of a run; `groups` runs interleave within a block.
void softmax_strided(const double* x, double* y, std::size_t nblocks,
                     std::size_t k, std::size_t groups) {
  for (std::size_t blk = 0; blk < nblocks; ++blk) {
    const double* xb = x + blk * k * groups;
    double* yb = y + blk * k * groups;
    for (std::size_t g = 0; g < groups; ++g) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, xb[i * groups + g]);
      double z = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double e = std::exp(xb[i * groups + g] - mx);
        yb[i * groups + g] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t i = 0; i < k; ++i) yb[i * groups + g] *= inv;
    }
  }
}

void softmax_backward_strided(const double* y, const double* dy, double* dx,
                              std::size_t nblocks, std::size_t k,
                              std::size_t groups) {
  for (std::size_t blk = 0; blk < nblocks; ++blk) {
    const double* yb = y + blk * k * groups;
    const double* dyb = dy + blk * k * groups;
    double* dxb = dx + blk * k * groups;
    for (std::size_t g = 0; g < groups; ++g) {
      double dot = 0.0;
      for (std::size_t i = 0; i < k; ++i)
        dot += yb[i * groups + g] * dyb[i * groups + g];
      for (std::size_t i = 0; i < k; ++i)
        dxb[i * groups + g] +=
            yb[i * groups + g] * (dyb[i * groups + g] - dot);
    }
  }
}

}  // namespace

Var channel_softmax(const Var& x) {
  const Shape& s = x.value().shape();
  require(s.size() >= 2, ErrorKind::Shape, "channel_softmax: rank < 2");
  const std::size_t b = s[0], k = s[1];
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < s.size(); ++i) spatial *= s[i];
  Tensor out(s);
  softmax_strided(x.value().data(), out.data(), b, k, spatial);
  auto y_keep = std::make_shared<Tensor>(out);
  return make_op(std::move(out), {x.node()},
                 [y_keep, b, k, spatial](Node& self) {
                   Tensor& gx = self.parents[0]->ensure_grad();
                   softmax_backward_strided(y_keep->data(), self.grad.data(),
                                            gx.data(), b, k, spatial);
                 });
}

Var softmax_lastdim(const Var& x) {
  const Shape& s = x.value().shape();
  require(!s.empty(), ErrorKind::Shape, "softmax_lastdim: empty shape");
  const std::size_t k = s.back();
  const std::size_t rows = x.value().size() / k;
  Tensor out(s);
  softmax_strided(x.value().data(), out.data(), rows, k, 1);
  auto y_keep = std::make_shared<Tensor>(out);
  return make_op(std::move(out), {x.node()}, [y_keep, rows, k](Node& self) {
    Tensor& gx = self.parents[0]->ensure_grad();
    softmax_backward_strided(y_keep->data(), self.grad.data(), gx.data(), rows,
                             k, 1);
  });
}

Var split_heads(const Var& x, std::size_t heads) {
  const Shape& s = x.value().shape();
  require(s.size() == 3, ErrorKind::Shape, "split_heads: expect (B,N,d)");
  const std::size_t b = s[0], n = s[1], d = s[2];
  require(d % heads == 0, ErrorKind::Config,
          "split_heads: d not divisible by heads");
  const std::size_t dh = d / heads;
  Tensor out(Shape{b, heads, n, dh});
  for (std::size_t ib = 0; ib < b; ++ib)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < n; ++t) {
        const double* src = x.value().data() + (ib * n + t) * d + h * dh;
        double* dst = out.data() + ((ib * heads + h) * n + t) * dh;
        std::copy(src, src + dh, dst);
      }
  return make_op(std::move(out), {x.node()}, [b, heads, n, dh, d](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t ib = 0; ib < b; ++ib)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < n; ++t) {
          const double* src =
              self.grad.data() + ((ib * heads + h) * n + t) * dh;
          double* dst = g.data() + (ib * n + t) * d + h * dh;
          for (std::size_t i = 0; i < dh; ++i) dst[i] += src[i];
        }
  });
}

Var merge_heads(const Var& x) {
  const Shape& s = x.value().shape();
  require(s.size() == 4, ErrorKind::Shape, "merge_heads: expect (B,h,N,dh)");
  const std::size_t b = s[0], heads = s[1], n = s[2], dh = s[3];
  const std::size_t d = heads * dh;
  Tensor out(Shape{b, n, d});
  for (std::size_t ib = 0; ib < b; ++ib)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < n; ++t) {
        const double* src = x.value().data() + ((ib * heads + h) * n + t) * dh;
        double* dst = out.data() + (ib * n + t) * d + h * dh;
        std::copy(src, src + dh, dst);
      }
  return make_op(std::move(out), {x.node()}, [b, heads, n, dh, d](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t ib = 0; ib < b; ++ib)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < n; ++t) {
          const double* src = self.grad.data() + (ib * n + t) * d + h * dh;
          double* dst = g.data() + ((ib * heads + h) * n + t) * dh;
          for (std::size_t i = 0; i < dh; ++i) dst[i] += src[i];
        }
  });
}

namespace {

void check_bmm(const Shape& a, const Shape& b, bool transpose_b) {
  require(a.size() == 4 && b.size() == 4, ErrorKind::Shape,
          "bmm: expect rank-4 inputs");
  require(a[0] == b[0] && a[1] == b[1], ErrorKind::Shape,
          "bmm: leading dims mismatch");
  if (transpose_b)
    require(a[3] == b[3], ErrorKind::Shape, "bmm_nt: inner dims mismatch");
  else
    require(a[3] == b[2], ErrorKind::Shape, "bmm: inner dims mismatch");
}

}  // namespace

Var bmm(const Var& a, const Var& b) {
  const Shape& sa = a.value().shape();
  const Shape& sb = b.value().shape();
  check_bmm(sa, sb, false);
  const std::size_t mats = sa[0] * sa[1], m = sa[2], k = sa[3], n = sb[3];
  Tensor out(Shape{sa[0], sa[1], m, n});
  for (std::size_t i = 0; i < mats; ++i) {
    CMapRM am(a.value().data() + i * m * k, m, k);
    CMapRM bm(b.value().data() + i * k * n, k, n);
    MapRM om(out.data() + i * m * n, m, n);
    om.noalias() = am * bm;
  }
  return make_op(std::move(out), {a.node(), b.node()},
                 [mats, m, k, n](Node& self) {
                   const Tensor& av = self.parents[0]->value;
                   const Tensor& bv = self.parents[1]->value;
                   for (std::size_t i = 0; i < mats; ++i) {
                     CMapRM gym(self.grad.data() + i * m * n, m, n);
                     if (self.parents[0]->requires_grad) {
                       MapRM ga(self.parents[0]->ensure_grad().data() + i * m * k,
                                m, k);
                       CMapRM bm(bv.data() + i * k * n, k, n);
                       ga.noalias() += gym * bm.transpose();
                     }
                     if (self.parents[1]->requires_grad) {
                       MapRM gb(self.parents[1]->ensure_grad().data() + i * k * n,
                                k, n);
                       CMapRM am(av.data() + i * m * k, m, k);
                       gb.noalias() += am.transpose() * gym;
                     }
                   }
                 });
}

Var bmm_nt(const Var& a, const Var& b) {
  const Shape& sa = a.value().shape();
  const Shape& sb = b.value().shape();
  check_bmm(sa, sb, true);
  const std::size_t mats = sa[0] * sa[1], m = sa[2], k = sa[3], n = sb[2];
  Tensor out(Shape{sa[0], sa[1], m, n});
  for (std::size_t i = 0; i < mats; ++i) {
    CMapRM am(a.value().data() + i * m * k, m, k);
    CMapRM bm(b.value().data() + i * n * k, n, k);
    MapRM om(out.data() + i * m * n, m, n);
    om.noalias() = am * bm.transpose();
  }
  return make_op(std::move(out), {a.node(), b.node()},
                 [mats, m, k, n](Node& self) {
                   const Tensor& av = self.parents[0]->value;
                   const Tensor& bv = self.parents[1]->value;
                   for (std::size_t i = 0; i < mats; ++i) {
                     CMapRM gym(self.grad.data() + i * m * n, m, n);
                     if (self.parents[0]->requires_grad) {
                       MapRM ga(self.parents[0]->ensure_grad().data() + i * m * k,
                                m, k);
                       CMapRM bm(bv.data() + i * n * k, n, k);
                       ga.noalias() += gym * bm;
                     }
                     if (self.parents[1]->requires_grad) {
                       MapRM gb(self.parents[1]->ensure_grad().data() + i * n * k,
                                n, k);
                       CMapRM am(av.data() + i * m * k, m, k);
                       gb.noalias() += gym.transpose() * am;
                     }
                   }
                 });
}

Var volume_to_tokens(const Var& x) {
  const Shape& s = x.value().shape();
  require(s.size() == 5, ErrorKind::Shape, "volume_to_tokens: expect 5-D");
  require(s[2] == s[3] && s[2] == s[4], ErrorKind::Shape,
          "volume_to_tokens: expect cubic grid");
  const std::size_t b = s[0], d = s[1], g = s[2];
  const std::size_t n = g * g * g;
  Tensor out(Shape{b, n, d});
  for (std::size_t ib = 0; ib < b; ++ib)
    for (std::size_t ch = 0; ch < d; ++ch) {
      const double* src = x.value().data() + (ib * d + ch) * n;
      for (std::size_t t = 0; t < n; ++t)
        out[(ib * n + t) * d + ch] = src[t];
    }
  return make_op(std::move(out), {x.node()}, [b, d, n](Node& self) {
    Tensor& gx = self.parents[0]->ensure_grad();
    for (std::size_t ib = 0; ib < b; ++ib)
      for (std::size_t ch = 0; ch < d; ++ch) {
        double* dst = gx.data() + (ib * d + ch) * n;
        for (std::size_t t = 0; t < n; ++t)
          dst[t] += self.grad[(ib * n + t) * d + ch];
      }
  });
}

Var tokens_to_volume_broadcast(const Var& t, std::size_t patch_side) {
  const Shape& s = t.value().shape();
  require(s.size() == 3, ErrorKind::Shape,
          "tokens_to_volume: expect (B,N,d)");
  const std::size_t b = s[0], n = s[1], d = s[2];
  std::size_t g = 0;
  while ((g + 1) * (g + 1) * (g + 1) <= n) ++g;
  require(g * g * g == n, ErrorKind::Shape,
          "tokens_to_volume: token count " + std::to_string(n) +
              " is not a perfect cube");
  const std::size_t p = patch_side;
  const std::size_t side = g * p;
  Tensor out(Shape{b, d, side, side, side});
  const std::size_t side2 = side * side;
  for (std::size_t ib = 0; ib < b; ++ib)
    for (std::size_t ch = 0; ch < d; ++ch) {
      double* dst = out.data() + (ib * d + ch) * side * side2;
      for (std::size_t tz = 0; tz < g; ++tz)
        for (std::size_t ty = 0; ty < g; ++ty)
          for (std::size_t tx = 0; tx < g; ++tx) {
            const std::size_t tok = (tz * g + ty) * g + tx;
            const double v = t.value()[(ib * n + tok) * d + ch];
            for (std::size_t pz = 0; pz < p; ++pz)
              for (std::size_t py = 0; py < p; ++py)
                for (std::size_t px = 0; px < p; ++px)
                  dst[(tz * p + pz) * side2 + (ty * p + py) * side +
                      (tx * p + px)] = v;
          }
    }
  return make_op(
      std::move(out), {t.node()}, [b, n, d, g, p, side, side2](Node& self) {
        Tensor& gt = self.parents[0]->ensure_grad();
        for (std::size_t ib = 0; ib < b; ++ib)
          for (std::size_t ch = 0; ch < d; ++ch) {
            const double* src =
                self.grad.data() + (ib * d + ch) * side * side2;
            for (std::size_t tz = 0; tz < g; ++tz)
              for (std::size_t ty = 0; ty < g; ++ty)
                for (std::size_t tx = 0; tx < g; ++tx) {
                  const std::size_t tok = (tz * g + ty) * g + tx;
                  double acc = 0.0;
                  for (std::size_t pz = 0; pz < p; ++pz)
                    for (std::size_t py = 0; py < p; ++py)
                      for (std::size_t px = 0; px < p; ++px)
                        acc += src[(tz * p + pz) * side2 +
                                   (ty * p + py) * side + (tx * p + px)];
                  gt[(ib * n + tok) * d + ch] += acc;
                }
          }
      });
}

Var gap(const Var& x) {
  const Shape& s = x.value().shape();
  require(s.size() >= 3, ErrorKind::Shape, "gap: expect (B,C,spatial...)");
  const std::size_t b = s[0], c = s[1];
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < s.size(); ++i) spatial *= s[i];
  Tensor out(Shape{b, c});
  for (std::size_t bc = 0; bc < b * c; ++bc) {
    const double* p = x.value().data() + bc * spatial;
    double acc = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) acc += p[i];
    out[bc] = acc / static_cast<double>(spatial);
  }
  return make_op(std::move(out), {x.node()}, [b, c, spatial](Node& self) {
    Tensor& g = self.parents[0]->ensure_grad();
    for (std::size_t bc = 0; bc < b * c; ++bc) {
      const double gg = self.grad[bc] / static_cast<double>(spatial);
      double* q = g.data() + bc * spatial;
      for (std::size_t i = 0; i < spatial; ++i) q[i] += gg;
    }
  });
}

}  // namespace pfda::ag
