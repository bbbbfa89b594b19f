#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pfda/autodiff.hpp"
#include "pfda/model.hpp"
#include "pfda/rng.hpp"

namespace pfda {

// Which adaptation terms are active in the training objective.
enum class StudyMode { grl_mmd, grl, mmd, none };

StudyMode parse_study_mode(const std::string& s);
std::string to_string(StudyMode m);
inline bool uses_grl(StudyMode m) {
  return m == StudyMode::grl_mmd || m == StudyMode::grl;
}
inline bool uses_mmd(StudyMode m) {
  return m == StudyMode::grl_mmd || m == StudyMode::mmd;
}

enum class LambdaSchedule { constant, ramp };

struct AdaptationConfig {
  StudyMode study = StudyMode::grl_mmd;
  double lambda_max = 1.0;
  LambdaSchedule schedule = LambdaSchedule::constant;

  double lambda_at(std::size_t step, std::size_t total_steps) const;
  void validate() const;
};

// Plain-tensor GRL pair, the Eq. 5/6 contract; ag::grl is the graph node.
Tensor grl_apply(const Tensor& x, double lambda);
Tensor grl_backward(const Tensor& upstream, double lambda);

// GAP -> FC stack d -> d/4 -> d/8 -> 2, hidden layers followed by ReLU,
// layer norm and dropout(p=0.2). Scales the paper's 512->128->64->2 head.
class DomainHead {
 public:
  static constexpr double kDropout = 0.2;

  DomainHead(const ModelConfig& cfg, Parameters& params, std::uint64_t seed);

  // vit_features: (B, d, spatial...) or already-pooled (B, d).
  // In train mode dropout masks come from `rng`, or from `fixed_masks`
  // (two entries) when the caller needs repeatable evaluations.
  ag::Var forward(const ag::Var& vit_features, bool train, Rng* rng,
                  const std::vector<Tensor>* fixed_masks = nullptr) const;

  std::vector<Tensor> draw_dropout_masks(std::size_t batch, Rng& rng) const;

 private:
  std::size_t dim_, h1_, h2_;
  ag::Var fc1_w_, fc1_b_, ln1_scale_, ln1_shift_;
  ag::Var fc2_w_, fc2_b_, ln2_scale_, ln2_shift_;
  ag::Var fc3_w_, fc3_b_;
};

// GAP + head; logits (B, 2). Softmax over the two logits gives domain
// probabilities.
ag::Var domain_classify(const ag::Var& vit_out, const DomainHead& head,
                        bool train = false, Rng* rng = nullptr);

// Mean softmax cross-entropy of 2-class logits vs one-hot domain labels
// (0 = source, 1 = target); equals binary CE for two classes.
ag::Var adversarial_loss(const ag::Var& logits,
                         const std::vector<int>& domain_labels);

double domain_accuracy(const Tensor& logits,
                       const std::vector<int>& domain_labels);

// ---- MMD ----

struct KernelBandwidths {
  std::vector<double> sigmas;  // M = 5, base * {1/4, 1/sqrt2, 1, sqrt2, 2}
  static KernelBandwidths from_base(double base_sigma);
};

// Median of pairwise Euclidean distances over all rows of (n, d); n >= 2.
// Degenerate all-identical batch falls back to base sigma 1.
KernelBandwidths median_bandwidths(const Tensor& features);

// Mixture-of-Gaussians kernel sum_m exp(-|f-f'|^2 / (2 sigma_m^2)).
double mk_kernel(const double* f, const double* g, std::size_t dim,
                 const std::vector<double>& sigmas);

// Unbiased three-term estimator over pooled features (B, d) partitioned by
// index lists; may be negative. Bandwidths are treated as constants in the
// backward pass.
ag::Var mmd2_unbiased(const ag::Var& features,
                      const std::vector<std::size_t>& source_rows,
                      const std::vector<std::size_t>& target_rows,
                      const KernelBandwidths& bw);

// Plain-value variant on two already-split sample matrices (ns, d), (nt, d).
double mmd2_unbiased_value(const Tensor& source, const Tensor& target,
                           const KernelBandwidths& bw);

}  // namespace pfda
