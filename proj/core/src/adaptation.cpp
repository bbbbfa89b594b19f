#include "pfda/adaptation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace pfda {

StudyMode parse_study_mode(const std::string& s) {
  if (s == "grl_mmd") return StudyMode::grl_mmd;
  if (s == "grl") return StudyMode::grl;
  if (s == "mmd") return StudyMode::mmd;
  if (s == "none") return StudyMode::none;
  fail(ErrorKind::Config,
       "study mode must be one of grl_mmd|grl|mmd|none, got '" + s + "'");
}

std::string to_string(StudyMode m) {
  switch (m) {
    case StudyMode::grl_mmd: return "grl_mmd";
    case StudyMode::grl: return "grl";
    case StudyMode::mmd: return "mmd";
    case StudyMode::none: return "none";
  }
  return "?";
}

void AdaptationConfig::validate() const {
  require(lambda_max >= 0.0, ErrorKind::Config,
          "AdaptationConfig: lambda must be >= 0");
}

double AdaptationConfig::lambda_at(std::size_t step,
                                   std::size_t total_steps) const {
  if (schedule == LambdaSchedule::constant || total_steps == 0)
    return lambda_max;
  const double t =
      static_cast<double>(step) / static_cast<double>(total_steps);
  return lambda_max * (2.0 / (1.0 + std::exp(-10.0 * t)) - 1.0);
}

Tensor grl_apply(const Tensor& x, double lambda) {
  require(lambda >= 0.0, ErrorKind::Config, "grl_apply: lambda must be >= 0");
  return x;  // exact identity
}

Tensor grl_backward(const Tensor& upstream, double lambda) {
  require(lambda >= 0.0, ErrorKind::Config,
          "grl_backward: lambda must be >= 0");
  Tensor out(upstream.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -lambda * upstream[i];
  return out;
}

// ---- DomainHead ----

DomainHead::DomainHead(const ModelConfig& cfg, Parameters& params,
                       std::uint64_t seed)
    : dim_(cfg.embed_dim), h1_(cfg.embed_dim / 4), h2_(cfg.embed_dim / 8) {
  Rng rng(stream_seed(seed, "domain_head_init"));
  fc1_w_ = params.add("dom.fc1.w", init_uniform(rng, {dim_, h1_}, dim_));
  fc1_b_ = params.add("dom.fc1.b", Tensor(Shape{h1_}));
  ln1_scale_ = params.add("dom.ln1_scale", Tensor(Shape{h1_}, 1.0));
  ln1_shift_ = params.add("dom.ln1_shift", Tensor(Shape{h1_}));
  fc2_w_ = params.add("dom.fc2.w", init_uniform(rng, {h1_, h2_}, h1_));
  fc2_b_ = params.add("dom.fc2.b", Tensor(Shape{h2_}));
  ln2_scale_ = params.add("dom.ln2_scale", Tensor(Shape{h2_}, 1.0));
  ln2_shift_ = params.add("dom.ln2_shift", Tensor(Shape{h2_}));
  fc3_w_ = params.add("dom.fc3.w", init_uniform(rng, {h2_, 2}, h2_));
  fc3_b_ = params.add("dom.fc3.b", Tensor(Shape{2}));
}

std::vector<Tensor> DomainHead::draw_dropout_masks(std::size_t batch,
                                                   Rng& rng) const {
  const double keep = 1.0 - kDropout;
  std::vector<Tensor> masks;
  for (std::size_t n : {h1_, h2_}) {
    Tensor m(Shape{batch, n});
    for (std::size_t i = 0; i < m.size(); ++i)
      m[i] = rng.uniform() < keep ? 1.0 / keep : 0.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

ag::Var DomainHead::forward(const ag::Var& vit_features, bool train, Rng* rng,
                            const std::vector<Tensor>* fixed_masks) const {
  ag::Var pooled = vit_features.value().rank() == 2
                       ? vit_features
                       : ag::gap(vit_features);
  require(pooled.value().dim(1) == dim_, ErrorKind::Shape,
          "DomainHead: feature dim mismatch");
  require(pooled.value().all_finite(), ErrorKind::Numeric,
          "DomainHead: non-finite features");
  const std::size_t batch = pooled.value().dim(0);

  std::vector<Tensor> drawn;
  const std::vector<Tensor>* masks = nullptr;
  if (train) {
    if (fixed_masks) {
      masks = fixed_masks;
    } else {
      require(rng != nullptr, ErrorKind::Config,
              "DomainHead: train mode needs an rng or fixed masks");
      drawn = draw_dropout_masks(batch, *rng);
      masks = &drawn;
    }
  }

  ag::Var h = ag::linear(pooled, fc1_w_, fc1_b_);
  h = ag::relu(h);
  h = ag::layernorm(h, ln1_scale_, ln1_shift_);
  if (masks) h = ag::dropout_mask(h, (*masks)[0]);
  h = ag::linear(h, fc2_w_, fc2_b_);
  h = ag::relu(h);
  h = ag::layernorm(h, ln2_scale_, ln2_shift_);
  if (masks) h = ag::dropout_mask(h, (*masks)[1]);
  return ag::linear(h, fc3_w_, fc3_b_);
}

ag::Var domain_classify(const ag::Var& vit_out, const DomainHead& head,
                        bool train, Rng* rng) {
  return head.forward(vit_out, train, rng);
}

ag::Var adversarial_loss(const ag::Var& logits,
                         const std::vector<int>& domain_labels) {
  const Shape& s = logits.value().shape();
  require(s.size() == 2 && s[1] == 2, ErrorKind::Shape,
          "adversarial_loss: expect (B,2) logits");
  const std::size_t b = s[0];
  require(b >= 1 && domain_labels.size() == b, ErrorKind::Config,
          "adversarial_loss: empty batch or label count mismatch");
  for (int l : domain_labels)
    require(l == 0 || l == 1, ErrorKind::Config,
            "adversarial_loss: labels must be 0 (source) or 1 (target)");

  // Stable log-softmax cross-entropy; backward is (softmax - onehot)/B.
  auto probs = std::make_shared<Tensor>(Shape{b, 2});
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double l0 = logits.value()[2 * i], l1 = logits.value()[2 * i + 1];
    const double mx = std::max(l0, l1);
    const double z = std::exp(l0 - mx) + std::exp(l1 - mx);
    const double log_z = mx + std::log(z);
    (*probs)[2 * i] = std::exp(l0 - log_z);
    (*probs)[2 * i + 1] = std::exp(l1 - log_z);
    const double logit_true = domain_labels[i] == 0 ? l0 : l1;
    loss += log_z - logit_true;
  }
  loss /= static_cast<double>(b);

  auto labels = std::make_shared<std::vector<int>>(domain_labels);
  return ag::make_op(
      Tensor::scalar(loss), {logits.node()}, [probs, labels, b](ag::Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const double gg = self.grad[0] / static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i) {
          g[2 * i] += gg * ((*probs)[2 * i] - ((*labels)[i] == 0 ? 1.0 : 0.0));
          g[2 * i + 1] +=
              gg * ((*probs)[2 * i + 1] - ((*labels)[i] == 1 ? 1.0 : 0.0));
        }
      });
}

double domain_accuracy(const Tensor& logits,
                       const std::vector<int>& domain_labels) {
  const std::size_t b = logits.dim(0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const int pred = logits[2 * i + 1] > logits[2 * i] ? 1 : 0;
    if (pred == domain_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(b);
}

// ---- MMD ----

KernelBandwidths KernelBandwidths::from_base(double base_sigma) {
  require(base_sigma > 0.0, ErrorKind::Config,
          "KernelBandwidths: base sigma must be > 0");
  const double inv_sqrt2 = 0.70710678118654752440;
  return {{base_sigma * 0.25, base_sigma * inv_sqrt2, base_sigma,
           base_sigma / inv_sqrt2, base_sigma * 2.0}};
}

KernelBandwidths median_bandwidths(const Tensor& features) {
  const Shape& s = features.shape();
  require(s.size() == 2, ErrorKind::Shape,
          "median_bandwidths: expect (n, d) features");
  const std::size_t n = s[0], d = s[1];
  require(n >= 2, ErrorKind::Undefined,
          "median_bandwidths: need at least 2 feature vectors");
  std::vector<double> dists;
  dists.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0.0;
      const double* a = features.data() + i * d;
      const double* b = features.data() + j * d;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a[k] - b[k];
        acc += diff * diff;
      }
      dists.push_back(std::sqrt(acc));
    }
  std::sort(dists.begin(), dists.end());
  const std::size_t m = dists.size();
  double median = m % 2 == 1 ? dists[m / 2]
                             : 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
  if (median == 0.0) median = 1.0;  // all-identical batch
  return KernelBandwidths::from_base(median);
}

double mk_kernel(const double* f, const double* g, std::size_t dim,
                 const std::vector<double>& sigmas) {
  double sq = 0.0;
  for (std::size_t k = 0; k < dim; ++k) {
    const double diff = f[k] - g[k];
    sq += diff * diff;
  }
  double acc = 0.0;
  for (double s : sigmas) acc += std::exp(-sq / (2.0 * s * s));
  return acc;
}

namespace {

// Estimator weight for the unordered pair (u, v) given the partition.
struct MmdPairWeights {
  double within_source, within_target, cross;
};

MmdPairWeights pair_weights(std::size_t ns, std::size_t nt) {
  return {2.0 / (static_cast<double>(ns) * static_cast<double>(ns - 1)),
          2.0 / (static_cast<double>(nt) * static_cast<double>(nt - 1)),
          -2.0 / (static_cast<double>(ns) * static_cast<double>(nt))};
}

}  // namespace

ag::Var mmd2_unbiased(const ag::Var& features,
                      const std::vector<std::size_t>& source_rows,
                      const std::vector<std::size_t>& target_rows,
                      const KernelBandwidths& bw) {
  const Shape& s = features.value().shape();
  require(s.size() == 2, ErrorKind::Shape, "mmd2_unbiased: expect (B, d)");
  const std::size_t ns = source_rows.size(), nt = target_rows.size();
  require(ns >= 2 && nt >= 2, ErrorKind::Undefined,
          "mmd2_unbiased: estimator needs n_s >= 2 and n_t >= 2 (got " +
              std::to_string(ns) + ", " + std::to_string(nt) + ")");
  const std::size_t d = s[1];
  for (std::size_t r : source_rows)
    require(r < s[0], ErrorKind::Bounds, "mmd2_unbiased: source row oob");
  for (std::size_t r : target_rows)
    require(r < s[0], ErrorKind::Bounds, "mmd2_unbiased: target row oob");

  // Combined ordering: sources then targets.
  std::vector<std::size_t> rows(source_rows);
  rows.insert(rows.end(), target_rows.begin(), target_rows.end());
  const std::size_t n = rows.size();
  const MmdPairWeights w = pair_weights(ns, nt);

  double value = 0.0;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v) {
      const double c = u < ns ? (v < ns ? w.within_source : w.cross)
                              : w.within_target;
      value += c * mk_kernel(features.value().data() + rows[u] * d,
                             features.value().data() + rows[v] * d, d,
                             bw.sigmas);
    }

  auto rows_keep = std::make_shared<std::vector<std::size_t>>(std::move(rows));
  auto sigmas = std::make_shared<std::vector<double>>(bw.sigmas);
  return ag::make_op(
      Tensor::scalar(value), {features.node()},
      [rows_keep, sigmas, ns, nt, d](ag::Node& self) {
        const Tensor& fv = self.parents[0]->value;
        Tensor& g = self.parents[0]->ensure_grad();
        const double gg = self.grad[0];
        const auto& rows = *rows_keep;
        const std::size_t n = rows.size();
        const MmdPairWeights w = pair_weights(ns, nt);
        for (std::size_t u = 0; u < n; ++u)
          for (std::size_t v = u + 1; v < n; ++v) {
            const double c = u < ns ? (v < ns ? w.within_source : w.cross)
                                    : w.within_target;
            const double* fu = fv.data() + rows[u] * d;
            const double* fvv = fv.data() + rows[v] * d;
            double sq = 0.0;
            for (std::size_t k = 0; k < d; ++k) {
              const double diff = fu[k] - fvv[k];
              sq += diff * diff;
            }
            // d k / d f_u = sum_m k_m(u,v) (f_v - f_u) / sigma_m^2 and the
            // negative for f_v; bandwidths held constant.
            double coef = 0.0;
            for (double sg : *sigmas)
              coef += std::exp(-sq / (2.0 * sg * sg)) / (sg * sg);
            double* gu = g.data() + rows[u] * d;
            double* gv = g.data() + rows[v] * d;
            for (std::size_t k = 0; k < d; ++k) {
              const double pull = gg * c * coef * (fvv[k] - fu[k]);
              gu[k] += pull;
              gv[k] -= pull;
            }
          }
      });
}

double mmd2_unbiased_value(const Tensor& source, const Tensor& target,
                           const KernelBandwidths& bw) {
  require(source.rank() == 2 && target.rank() == 2 &&
              source.dim(1) == target.dim(1),
          ErrorKind::Shape, "mmd2_unbiased_value: dim mismatch");
  const std::size_t ns = source.dim(0), nt = target.dim(0);
  const std::size_t d = source.dim(1);
  Tensor combined(Shape{ns + nt, d});
  std::copy(source.data(), source.data() + source.size(), combined.data());
  std::copy(target.data(), target.data() + target.size(),
            combined.data() + source.size());
  std::vector<std::size_t> src(ns), tgt(nt);
  for (std::size_t i = 0; i < ns; ++i) src[i] = i;
  for (std::size_t j = 0; j < nt; ++j) tgt[j] = ns + j;
  ag::Var f = ag::Var::leaf(std::move(combined), false);
  return mmd2_unbiased(f, src, tgt, bw).value().item();
}

}  // namespace pfda
