#include "pfda/losses.hpp"

#include <cmath>
#include <memory>

namespace pfda {

void LossWeights::validate() const {
  require(alpha_mix >= 0.3 && alpha_mix <= 0.5, ErrorKind::Config,
          "LossWeights: alpha_mix must lie in [0.3, 0.5] (got " +
              std::to_string(alpha_mix) + ")");
  require(alpha_balance >= 0.0 && alpha_balance <= 1.0, ErrorKind::Config,
          "LossWeights: alpha_balance must lie in [0, 1]");
  require(gamma >= 0.0, ErrorKind::Config, "LossWeights: gamma must be >= 0");
  require(alpha_adv >= 0.0, ErrorKind::Config,
          "LossWeights: alpha_adv must be >= 0");
  require(beta_mmd >= 0.0, ErrorKind::Config,
          "LossWeights: beta_mmd must be >= 0");
}

namespace {

void check_pair(const ag::Var& p, const Tensor& y, const char* op) {
  require(p.value().size() == y.size() && p.value().size() >= 1,
          ErrorKind::Shape,
          std::string(op) + ": p and y must have equal nonzero size");
}

}  // namespace

ag::Var dice_loss(const ag::Var& p, const Tensor& y, double eps) {
  check_pair(p, y, "dice_loss");
  const std::size_t n = y.size();
  double inter = 0.0, psum = 0.0, ysum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    inter += p.value()[i] * y[i];
    psum += p.value()[i];
    ysum += y[i];
  }
  const double denom = psum + ysum + eps;
  const double value = 1.0 - (2.0 * inter + eps) / denom;
  auto y_keep = std::make_shared<Tensor>(y);
  const double num = 2.0 * inter + eps;
  return ag::make_op(
      Tensor::scalar(value), {p.node()}, [y_keep, denom, num](ag::Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const double gg = self.grad[0];
        const Tensor& yy = *y_keep;
        // d/dp_i [ -(2*inter+eps)/denom ] with denom also depending on p_i.
        const double inv_d = 1.0 / denom;
        for (std::size_t i = 0; i < g.size(); ++i)
          g[i] += gg * (-(2.0 * yy[i]) * inv_d + num * inv_d * inv_d);
      });
}

namespace {

inline double clip(double v, double eps) {
  return v < eps ? eps : (v > 1.0 - eps ? 1.0 - eps : v);
}
inline bool in_band(double v, double eps) { return v >= eps && v <= 1.0 - eps; }

}  // namespace

ag::Var ce_loss(const ag::Var& p, const Tensor& y, double eps) {
  check_pair(p, y, "ce_loss");
  const std::size_t n = y.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pc = clip(p.value()[i], eps);
    acc -= y[i] * std::log(pc) + (1.0 - y[i]) * std::log(1.0 - pc);
  }
  const double value = acc / static_cast<double>(n);
  auto y_keep = std::make_shared<Tensor>(y);
  return ag::make_op(
      Tensor::scalar(value), {p.node()}, [y_keep, eps, n](ag::Node& self) {
        const Tensor& pv = self.parents[0]->value;
        Tensor& g = self.parents[0]->ensure_grad();
        const double gg = self.grad[0] / static_cast<double>(n);
        const Tensor& yy = *y_keep;
        for (std::size_t i = 0; i < n; ++i) {
          if (!in_band(pv[i], eps)) continue;  // clipped region is flat
          const double pc = clip(pv[i], eps);
          g[i] += gg * (-(yy[i] / pc) + (1.0 - yy[i]) / (1.0 - pc));
        }
      });
}

ag::Var focal_loss(const ag::Var& p, const Tensor& y, double alpha_balance,
                   double gamma, double eps) {
  check_pair(p, y, "focal_loss");
  require(alpha_balance >= 0.0 && alpha_balance <= 1.0, ErrorKind::Config,
          "focal_loss: alpha_balance must lie in [0, 1]");
  require(gamma >= 0.0, ErrorKind::Config, "focal_loss: gamma must be >= 0");
  const std::size_t n = y.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool fg = y[i] > 0.5;
    const double pt = clip(fg ? p.value()[i] : 1.0 - p.value()[i], eps);
    const double alpha_i = fg ? alpha_balance : 1.0 - alpha_balance;
    acc -= alpha_i * std::pow(1.0 - pt, gamma) * std::log(pt);
  }
  const double value = acc / static_cast<double>(n);
  auto y_keep = std::make_shared<Tensor>(y);
  return ag::make_op(
      Tensor::scalar(value), {p.node()},
      [y_keep, alpha_balance, gamma, eps, n](ag::Node& self) {
        const Tensor& pv = self.parents[0]->value;
        Tensor& g = self.parents[0]->ensure_grad();
        const double gg = self.grad[0] / static_cast<double>(n);
        const Tensor& yy = *y_keep;
        for (std::size_t i = 0; i < n; ++i) {
          const bool fg = yy[i] > 0.5;
          const double pt_raw = fg ? pv[i] : 1.0 - pv[i];
          if (!in_band(pt_raw, eps)) continue;
          const double pt = clip(pt_raw, eps);
          const double alpha_i = fg ? alpha_balance : 1.0 - alpha_balance;
          const double one_m = 1.0 - pt;
          // d/dpt of -alpha (1-pt)^g log(pt)
          const double d_pt =
              alpha_i * (gamma > 0.0
                             ? gamma * std::pow(one_m, gamma - 1.0) * std::log(pt)
                             : 0.0) -
              alpha_i * std::pow(one_m, gamma) / pt;
          g[i] += gg * (fg ? d_pt : -d_pt);
        }
      });
}

ag::Var seg_loss(const ag::Var& p, const Tensor& y, const LossWeights& w) {
  require(w.alpha_mix >= 0.0 && w.alpha_mix <= 1.0, ErrorKind::Config,
          "seg_loss: alpha_mix must lie in [0, 1]");
  ag::Var base = ag::add(dice_loss(p, y), ce_loss(p, y));
  ag::Var focal = focal_loss(p, y, w.alpha_balance, w.gamma);
  return ag::add(ag::scale(base, 1.0 - w.alpha_mix),
                 ag::scale(focal, w.alpha_mix));
}

ag::Var total_loss(const ag::Var& seg, const ag::Var& adv, const ag::Var& mmd2,
                   const LossWeights& w, StudyMode mode) {
  require(seg.value().size() == 1 && adv.value().size() == 1 &&
              mmd2.value().size() == 1,
          ErrorKind::Shape, "total_loss: components must be scalars");
  require(std::isfinite(seg.value()[0]) && std::isfinite(adv.value()[0]) &&
              std::isfinite(mmd2.value()[0]),
          ErrorKind::Numeric, "total_loss: non-finite component");
  const double a = uses_grl(mode) ? w.alpha_adv : 0.0;
  const double b = uses_mmd(mode) ? w.beta_mmd : 0.0;
  return ag::add_scaled(ag::add_scaled(seg, adv, a), mmd2, b);
}

}  // namespace pfda
