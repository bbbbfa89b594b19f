#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

#include "pfda/autodiff.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pfda::ag {

namespace {

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

// Output spatial positions per im2col chunk. Bounds the K x chunk scratch
// buffer to a few tens of MB for the largest layers.
constexpr std::size_t kColChunk = 16384;

struct ConvDims {
  std::size_t batch, cin, d, h, w;
  std::size_t cout, k;
  int stride, pad;
  std::size_t od, oh, ow;
  std::size_t in_spatial() const { return d * h * w; }
  std::size_t out_spatial() const { return od * oh * ow; }
  std::size_t patch() const { return cin * k * k * k; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  require(x.rank() == 5, ErrorKind::Shape, "conv3d: input must be 5-D");
  require(w.rank() == 5, ErrorKind::Shape, "conv3d: weight must be 5-D");
  require(w.dim(2) == w.dim(3) && w.dim(2) == w.dim(4), ErrorKind::Shape,
          "conv3d: kernel must be cubic");
  require(x.dim(1) == w.dim(1), ErrorKind::Shape,
          "conv3d: input channels " + std::to_string(x.dim(1)) +
              " do not match weight channels " + std::to_string(w.dim(1)));
  ConvDims cd;
  cd.batch = x.dim(0);
  cd.cin = x.dim(1);
  cd.d = x.dim(2);
  cd.h = x.dim(3);
  cd.w = x.dim(4);
  cd.cout = w.dim(0);
  cd.k = w.dim(2);
  cd.stride = stride;
  cd.pad = pad;
  auto out_dim = [&](std::size_t n) {
    const std::int64_t span =
        static_cast<std::int64_t>(n) + 2 * pad - static_cast<std::int64_t>(cd.k);
    require(span >= 0 && span % stride == 0, ErrorKind::Shape,
            "conv3d: spatial dim " + std::to_string(n) +
                " incompatible with kernel/stride/pad");
    return static_cast<std::size_t>(span / stride) + 1;
  };
  cd.od = out_dim(cd.d);
  cd.oh = out_dim(cd.h);
  cd.ow = out_dim(cd.w);
  return cd;
}

// Fills cols (patch x count) with the receptive fields of output positions
// [pos0, pos0+count) of one sample. Zero-padded out-of-grid taps.
void im2col_chunk(const double* x, const ConvDims& cd, std::size_t pos0,
                  std::size_t count, double* cols) {
  const std::size_t hw = cd.h * cd.w;
  const std::size_t ohw = cd.oh * cd.ow;
  for (std::size_t ci = 0; ci < cd.cin; ++ci) {
    const double* xc = x + ci * cd.in_spatial();
    for (std::size_t kz = 0; kz < cd.k; ++kz)
      for (std::size_t ky = 0; ky < cd.k; ++ky)
        for (std::size_t kx = 0; kx < cd.k; ++kx) {
          const std::size_t row =
              ((ci * cd.k + kz) * cd.k + ky) * cd.k + kx;
          double* dst = cols + row * count;
          for (std::size_t i = 0; i < count; ++i) {
            const std::size_t pos = pos0 + i;
            const std::size_t oz = pos / ohw;
            const std::size_t oy = (pos % ohw) / cd.ow;
            const std::size_t ox = pos % cd.ow;
            const std::int64_t iz =
                static_cast<std::int64_t>(oz) * cd.stride - cd.pad + kz;
            const std::int64_t iy =
                static_cast<std::int64_t>(oy) * cd.stride - cd.pad + ky;
            const std::int64_t ix =
                static_cast<std::int64_t>(ox) * cd.stride - cd.pad + kx;
            if (iz < 0 || iy < 0 || ix < 0 ||
                iz >= static_cast<std::int64_t>(cd.d) ||
                iy >= static_cast<std::int64_t>(cd.h) ||
                ix >= static_cast<std::int64_t>(cd.w)) {
              dst[i] = 0.0;
            } else {
              dst[i] = xc[iz * hw + iy * cd.w + ix];
            }
          }
        }
  }
}

// Scatter-adds col-shaped gradients back onto the input grid of one sample.
void col2im_chunk(const double* cols, const ConvDims& cd, std::size_t pos0,
                  std::size_t count, double* gx) {
  const std::size_t hw = cd.h * cd.w;
  const std::size_t ohw = cd.oh * cd.ow;
  for (std::size_t ci = 0; ci < cd.cin; ++ci) {
    double* gc = gx + ci * cd.in_spatial();
    for (std::size_t kz = 0; kz < cd.k; ++kz)
      for (std::size_t ky = 0; ky < cd.k; ++ky)
        for (std::size_t kx = 0; kx < cd.k; ++kx) {
          const std::size_t row =
              ((ci * cd.k + kz) * cd.k + ky) * cd.k + kx;
          const double* src = cols + row * count;
          for (std::size_t i = 0; i < count; ++i) {
            const std::size_t pos = pos0 + i;
            const std::size_t oz = pos / ohw;
            const std::size_t oy = (pos % ohw) / cd.ow;
            const std::size_t ox = pos % cd.ow;
            const std::int64_t iz =
                static_cast<std::int64_t>(oz) * cd.stride - cd.pad + kz;
            const std::int64_t iy =
                static_cast<std::int64_t>(oy) * cd.stride - cd.pad + ky;
            const std::int64_t ix =
                static_cast<std::int64_t>(ox) * cd.stride - cd.pad + kx;
            if (iz < 0 || iy < 0 || ix < 0 ||
                iz >= static_cast<std::int64_t>(cd.d) ||
                iy >= static_cast<std::int64_t>(cd.h) ||
                ix >= static_cast<std::int64_t>(cd.w))
              continue;
            gc[iz * hw + iy * cd.w + ix] += src[i];
          }
        }
  }
}

void conv_forward_sample(const double* x, const double* w, const double* b,
                         const ConvDims& cd, double* y, double* scratch) {
  const std::size_t npos = cd.out_spatial();
  CMapRM wm(w, cd.cout, cd.patch());
  for (std::size_t pos0 = 0; pos0 < npos; pos0 += kColChunk) {
    const std::size_t count = std::min(kColChunk, npos - pos0);
    im2col_chunk(x, cd, pos0, count, scratch);
    CMapRM cols(scratch, cd.patch(), count);
    for (std::size_t co = 0; co < cd.cout; ++co) {
      Eigen::Map<Eigen::RowVectorXd> yrow(y + co * npos + pos0, count);
      yrow.noalias() = wm.row(co) * cols;
      yrow.array() += b[co];
    }
  }
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
  const ConvDims cd = conv_dims(x.value(), w.value(), stride, pad);
  require(b.value().size() == cd.cout, ErrorKind::Shape,
          "conv3d: bias size mismatch");
  Tensor out(Shape{cd.batch, cd.cout, cd.od, cd.oh, cd.ow});
  const std::size_t in_stride = cd.cin * cd.in_spatial();
  const std::size_t out_stride = cd.cout * cd.out_spatial();

#pragma omp parallel for schedule(static)
  for (std::int64_t ib = 0; ib < static_cast<std::int64_t>(cd.batch); ++ib) {
    std::vector<double> scratch(cd.patch() *
                                std::min(kColChunk, cd.out_spatial()));
    conv_forward_sample(x.value().data() + ib * in_stride, w.value().data(),
                        b.value().data(), cd, out.data() + ib * out_stride,
                        scratch.data());
  }

  return make_op(
      std::move(out), {x.node(), w.node(), b.node()},
      [cd, in_stride, out_stride](Node& self) {
        const Tensor& xv = self.parents[0]->value;
        const Tensor& wv = self.parents[1]->value;
        const bool need_gx = self.parents[0]->requires_grad;
        const std::size_t npos = cd.out_spatial();
        const std::size_t patch = cd.patch();

        // Per-sample weight/bias gradients, reduced in batch order afterwards
        // so the result does not depend on thread scheduling.
        std::vector<Tensor> gw_partial(cd.batch, Tensor(Shape{cd.cout, patch}));
        std::vector<Tensor> gb_partial(cd.batch, Tensor(Shape{cd.cout}));
        Tensor* gx = nullptr;
        if (need_gx) gx = &self.parents[0]->ensure_grad();

#pragma omp parallel for schedule(static)
        for (std::int64_t ib = 0; ib < static_cast<std::int64_t>(cd.batch);
             ++ib) {
          const std::size_t chunk = std::min(kColChunk, npos);
          std::vector<double> cols(patch * chunk);
          std::vector<double> gcols(need_gx ? patch * chunk : 0);
          const double* gy = self.grad.data() + ib * out_stride;
          CMapRM wm(wv.data(), cd.cout, patch);
          MapRM gwm(gw_partial[ib].data(), cd.cout, patch);
          double* gb = gb_partial[ib].data();
          for (std::size_t pos0 = 0; pos0 < npos; pos0 += chunk) {
            const std::size_t count = std::min(chunk, npos - pos0);
            im2col_chunk(xv.data() + ib * in_stride, cd, pos0, count,
                         cols.data());
            CMapRM colm(cols.data(), patch, count);
            // dW += dY * cols^T, db += rowsum(dY)
            for (std::size_t co = 0; co < cd.cout; ++co) {
              Eigen::Map<const Eigen::RowVectorXd> gyrow(gy + co * npos + pos0,
                                                         count);
              gwm.row(co).noalias() += gyrow * colm.transpose();
              gb[co] += gyrow.sum();
            }
            if (need_gx) {
              MapRM gcolm(gcols.data(), patch, count);
              gcolm.setZero();
              for (std::size_t co = 0; co < cd.cout; ++co) {
                Eigen::Map<const Eigen::RowVectorXd> gyrow(
                    gy + co * npos + pos0, count);
                gcolm.noalias() += wm.row(co).transpose() * gyrow;
              }
              col2im_chunk(gcols.data(), cd, pos0, count,
                           gx->data() + ib * in_stride);
            }
          }
        }

        if (self.parents[1]->requires_grad) {
          Tensor& gw = self.parents[1]->ensure_grad();
          for (std::size_t ib = 0; ib < cd.batch; ++ib)
            for (std::size_t i = 0; i < gw.size(); ++i)
              gw[i] += gw_partial[ib][i];
        }
        if (self.parents[2]->requires_grad) {
          Tensor& gb = self.parents[2]->ensure_grad();
          for (std::size_t ib = 0; ib < cd.batch; ++ib)
            for (std::size_t i = 0; i < gb.size(); ++i)
              gb[i] += gb_partial[ib][i];
        }
      });
}

Var maxpool2(const Var& x) {
  const Shape& s = x.value().shape();
  require(s.size() == 5, ErrorKind::Shape, "maxpool2: input must be 5-D");
  require(s[2] % 2 == 0 && s[3] % 2 == 0 && s[4] % 2 == 0, ErrorKind::Shape,
          "maxpool2: spatial dims must be even");
  const std::size_t b = s[0], c = s[1], d = s[2], h = s[3], w = s[4];
  const std::size_t od = d / 2, oh = h / 2, ow = w / 2;
  Tensor out(Shape{b, c, od, oh, ow});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  const std::size_t hw = h * w;

#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(b * c); ++bc) {
    const double* xs = x.value().data() + bc * d * hw;
    double* ys = out.data() + bc * od * oh * ow;
    std::uint32_t* as = argmax->data() + bc * od * oh * ow;
    std::size_t o = 0;
    for (std::size_t oz = 0; oz < od; ++oz)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
          double best = -std::numeric_limits<double>::infinity();
          std::uint32_t best_idx = 0;
          for (std::size_t dz = 0; dz < 2; ++dz)
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx =
                    (2 * oz + dz) * hw + (2 * oy + dy) * w + (2 * ox + dx);
                if (xs[idx] > best) {  // first max wins ties
                  best = xs[idx];
                  best_idx = static_cast<std::uint32_t>(idx);
                }
              }
          ys[o] = best;
          as[o] = best_idx;
        }
  }

  const std::size_t in_cs = d * hw, out_cs = od * oh * ow;
  return make_op(std::move(out), {x.node()},
                 [argmax, b, c, in_cs, out_cs](Node& self) {
                   Tensor& g = self.parents[0]->ensure_grad();
                   for (std::size_t bc = 0; bc < b * c; ++bc) {
                     double* gs = g.data() + bc * in_cs;
                     const double* gy = self.grad.data() + bc * out_cs;
                     const std::uint32_t* as = argmax->data() + bc * out_cs;
                     for (std::size_t o = 0; o < out_cs; ++o)
                       gs[as[o]] += gy[o];
                   }
                 });
}

namespace {

struct LerpAxis {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;  // weight of i1; weight of i0 is 1 - w1
};

// Half-voxel-center mapping with edge clamping: source = (o + 0.5)/2 - 0.5.
LerpAxis lerp_axis(std::size_t out_n, std::size_t in_n) {
  LerpAxis a;
  a.i0.resize(out_n);
  a.i1.resize(out_n);
  a.w1.resize(out_n);
  for (std::size_t o = 0; o < out_n; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (src <= 0.0) {
      a.i0[o] = a.i1[o] = 0;
      a.w1[o] = 0.0;
    } else if (src >= static_cast<double>(in_n - 1)) {
      a.i0[o] = a.i1[o] = in_n - 1;
      a.w1[o] = 0.0;
    } else {
      const std::size_t f = static_cast<std::size_t>(src);
      a.i0[o] = f;
      a.i1[o] = f + 1;
      a.w1[o] = src - static_cast<double>(f);
    }
  }
  return a;
}

}  // namespace

Var upsample_trilinear2x(const Var& x) {
  const Shape& s = x.value().shape();
  require(s.size() == 5, ErrorKind::Shape, "upsample: input must be 5-D");
  const std::size_t b = s[0], c = s[1], d = s[2], h = s[3], w = s[4];
  const std::size_t od = 2 * d, oh = 2 * h, ow = 2 * w;
  const LerpAxis az = lerp_axis(od, d), ay = lerp_axis(oh, h),
                 ax = lerp_axis(ow, w);
  Tensor out(Shape{b, c, od, oh, ow});
  const std::size_t hw = h * w;

#pragma omp parallel for schedule(static)
  for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(b * c); ++bc) {
    const double* xs = x.value().data() + bc * d * hw;
    double* ys = out.data() + bc * od * oh * ow;
    std::size_t o = 0;
    for (std::size_t oz = 0; oz < od; ++oz)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
          const double wz1 = az.w1[oz], wy1 = ay.w1[oy], wx1 = ax.w1[ox];
          const double wz0 = 1.0 - wz1, wy0 = 1.0 - wy1, wx0 = 1.0 - wx1;
          const std::size_t z0 = az.i0[oz] * hw, z1 = az.i1[oz] * hw;
          const std::size_t y0 = ay.i0[oy] * w, y1 = ay.i1[oy] * w;
          const std::size_t x0 = ax.i0[ox], x1 = ax.i1[ox];
          ys[o] = wz0 * (wy0 * (wx0 * xs[z0 + y0 + x0] + wx1 * xs[z0 + y0 + x1]) +
                         wy1 * (wx0 * xs[z0 + y1 + x0] + wx1 * xs[z0 + y1 + x1])) +
                  wz1 * (wy0 * (wx0 * xs[z1 + y0 + x0] + wx1 * xs[z1 + y0 + x1]) +
                         wy1 * (wx0 * xs[z1 + y1 + x0] + wx1 * xs[z1 + y1 + x1]));
        }
  }

  auto axes = std::make_shared<std::array<LerpAxis, 3>>(
      std::array<LerpAxis, 3>{az, ay, ax});
  return make_op(
      std::move(out), {x.node()}, [axes, b, c, d, h, w](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const LerpAxis& az = (*axes)[0];
        const LerpAxis& ay = (*axes)[1];
        const LerpAxis& ax = (*axes)[2];
        const std::size_t od = 2 * d, oh = 2 * h, ow = 2 * w;
        const std::size_t hw = h * w;
#pragma omp parallel for schedule(static)
        for (std::int64_t bc = 0; bc < static_cast<std::int64_t>(b * c); ++bc) {
          double* gs = g.data() + bc * d * hw;
          const double* gy = self.grad.data() + bc * od * oh * ow;
          std::size_t o = 0;
          for (std::size_t oz = 0; oz < od; ++oz)
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                const double go = gy[o];
                const double wz1 = az.w1[oz], wy1 = ay.w1[oy], wx1 = ax.w1[ox];
                const double wz0 = 1.0 - wz1, wy0 = 1.0 - wy1, wx0 = 1.0 - wx1;
                const std::size_t z0 = az.i0[oz] * hw, z1 = az.i1[oz] * hw;
                const std::size_t y0 = ay.i0[oy] * w, y1 = ay.i1[oy] * w;
                const std::size_t x0 = ax.i0[ox], x1 = ax.i1[ox];
                gs[z0 + y0 + x0] += go * wz0 * wy0 * wx0;
                gs[z0 + y0 + x1] += go * wz0 * wy0 * wx1;
                gs[z0 + y1 + x0] += go * wz0 * wy1 * wx0;
                gs[z0 + y1 + x1] += go * wz0 * wy1 * wx1;
                gs[z1 + y0 + x0] += go * wz1 * wy0 * wx0;
                gs[z1 + y0 + x1] += go * wz1 * wy0 * wx1;
                gs[z1 + y1 + x0] += go * wz1 * wy1 * wx0;
                gs[z1 + y1 + x1] += go * wz1 * wy1 * wx1;
              }
        }
      });
}

}  // namespace pfda::ag
