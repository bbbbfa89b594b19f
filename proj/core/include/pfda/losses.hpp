#pragma once

#include "pfda/adaptation.hpp"
#include "pfda/autodiff.hpp"

namespace pfda {

// Weights of the composite objective. alpha_mix is the focal share of
// Eq.-17-style mixing: seg = (1-alpha_mix)(dice + ce) + alpha_mix*focal.
struct LossWeights {
  double alpha_mix = 0.4;
  double alpha_balance = 0.25;
  double gamma = 2.0;
  double alpha_adv = 0.1;
  double beta_mmd = 0.1;

  // Experiment-level ranges; the loss functions themselves accept any
  // alpha_mix in [0, 1] (the alpha_mix = 0 corner is the plain Dice+CE base).
  void validate() const;
};

// All segmentation losses take the foreground-probability map p (values in
// [0,1]) and a binary ground-truth tensor of identical element count,
// flattened over whatever batch/spatial structure they carry.
inline constexpr double kLossEps = 1e-6;

ag::Var dice_loss(const ag::Var& p, const Tensor& y, double eps = kLossEps);
ag::Var ce_loss(const ag::Var& p, const Tensor& y, double eps = kLossEps);
ag::Var focal_loss(const ag::Var& p, const Tensor& y, double alpha_balance,
                   double gamma, double eps = kLossEps);
ag::Var seg_loss(const ag::Var& p, const Tensor& y, const LossWeights& w);

// total = seg + alpha_adv*adv + beta_mmd*mmd2, with the study mode zeroing
// inactive terms. mmd2 may be negative (unbiased estimator) and is consumed
// raw; only reporting clamps at zero.
ag::Var total_loss(const ag::Var& seg, const ag::Var& adv, const ag::Var& mmd2,
                   const LossWeights& w, StudyMode mode);

}  // namespace pfda
