#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pfda/adaptation.hpp"
#include "pfda/losses.hpp"
#include "pfda/metrics.hpp"
#include "pfda/model.hpp"
#include "pfda/phantom.hpp"
#include "pfda/volume.hpp"

namespace pfda {

// ---- datasets ----

class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual const DatasetManifest& manifest() const = 0;
  virtual std::pair<Volume, MaskVolume> load(const CaseRecord& rec) const = 0;
};

class DiskDataset : public Dataset {
 public:
  explicit DiskDataset(std::filesystem::path root);
  const DatasetManifest& manifest() const override { return manifest_; }
  std::pair<Volume, MaskVolume> load(const CaseRecord& rec) const override;

 private:
  std::filesystem::path root_;
  DatasetManifest manifest_;
};

// Regenerates cases deterministically on demand; no files touched.
class PhantomDataset : public Dataset {
 public:
  explicit PhantomDataset(PhantomDatasetSpec spec);
  const DatasetManifest& manifest() const override { return manifest_; }
  std::pair<Volume, MaskVolume> load(const CaseRecord& rec) const override;
  const PhantomDatasetSpec& spec() const { return spec_; }

 private:
  PhantomDatasetSpec spec_;
  DatasetManifest manifest_;
};

// ---- batching ----

struct DomainBatch {
  std::vector<CaseRecord> source;
  std::vector<CaseRecord> target;
};

// Pure function of its arguments: epoch e always yields the same batches for
// the same seed, which is what makes checkpoint resume bit-exact. Every
// source train case appears exactly once per epoch (n_source % n_s == 0 is
// validated upstream); target cases cycle through reshuffled permutations.
std::vector<DomainBatch> make_batches(const DatasetManifest& manifest,
                                      const std::string& source_site,
                                      const std::string& target_site,
                                      std::size_t n_s, std::size_t n_t,
                                      std::uint64_t seed, std::size_t epoch);

// Batch tensors ready for the graph: source samples first, then target.
struct AssembledBatch {
  Tensor x;                       // (n_s + n_t, 1, S, S, S)
  Tensor y_source;                // (n_s, S, S, S)
  std::optional<Tensor> y_target; // (n_t, S, S, S) when supervising target
  std::vector<int> domain_labels; // 0 source, 1 target
  std::size_t n_source = 0, n_target = 0;
};

AssembledBatch assemble_batch(const Dataset& data, const DomainBatch& batch,
                              std::size_t input_side, bool zscore,
                              bool with_target_masks);

// ---- optimizer ----

class Adam {
 public:
  Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void step(Parameters& params);
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  // Serialized with checkpoints.
  std::uint64_t t() const { return t_; }
  std::vector<std::pair<std::string, Tensor>>& moments1() { return m_; }
  std::vector<std::pair<std::string, Tensor>>& moments2() { return v_; }
  void restore(std::uint64_t t) { t_ = t; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::pair<std::string, Tensor>> m_, v_;
};

// Scales all trainable gradients so their global L2 norm is at most
// max_norm; returns the pre-clip norm. max_norm <= 0 disables clipping.
double clip_global_grad_norm(Parameters& params, double max_norm);

// ---- training state ----

struct TrainConfig {
  std::size_t batch_source = 2;
  std::size_t batch_target = 2;
  std::size_t epochs = 8;
  double lr = 1e-4;
  double clip_norm = 5.0;
  bool supervise_target = false;
  bool zscore = false;
  std::uint64_t seed = 1;
  AdaptationConfig adapt;
  LossWeights weights;

  void validate() const;
};

struct TrainState {
  ModelConfig cfg;
  Parameters params;
  std::unique_ptr<SegModel> model;
  std::unique_ptr<DomainHead> head;
  Adam opt;
  std::uint64_t step = 0;
  Rng dropout_rng;
  double best_val_dice = -1.0;

  TrainState() = default;
  TrainState(const TrainState&) = delete;
  TrainState& operator=(const TrainState&) = delete;
  TrainState(TrainState&&) = default;
  TrainState& operator=(TrainState&&) = default;
};

TrainState make_train_state(const ModelConfig& cfg, const TrainConfig& tcfg);

// ---- loss graph / train step ----

struct GraphOptions {
  bool train = true;
  bool update_bn = true;
  bool apply_grl = true;  // false: plain wiring (sign test / gradient check)
  double lambda = 1.0;
  const std::vector<Tensor>* fixed_dropout_masks = nullptr;
  const KernelBandwidths* pinned_bandwidths = nullptr;
};

struct TrainingGraph {
  ag::Var total, seg, adv, mmd2;
  Tensor domain_logits_eval;  // dropout-free logits for logging
};

TrainingGraph build_training_graph(SegModel& model, const DomainHead& head,
                                   const AssembledBatch& batch,
                                   const LossWeights& weights, StudyMode mode,
                                   const GraphOptions& opts,
                                   Rng* dropout_rng);

struct LossBreakdown {
  double seg = 0.0, adv = 0.0, mmd2 = 0.0, total = 0.0;
  double domain_acc = 0.0;
  double lambda = 0.0;
  double grad_norm = 0.0;
};

LossBreakdown train_step(TrainState& state, const AssembledBatch& batch,
                         const TrainConfig& tcfg, StudyMode mode,
                         std::size_t total_steps);

// ---- validation ----

struct CaseEvaluation {
  CaseMetrics metrics;
  std::string site;
  std::optional<MaskFeatures> pred_features;  // absent when pred mask empty
  MaskFeatures gt_features;
};

struct MetricsReport {
  std::vector<CaseEvaluation> cases;

  // Mean over defined values; site empty = all sites.
  double mean(const std::string& metric, const std::string& site = "") const;
  static const std::vector<std::string>& metric_names();
};

MaskVolume predict_mask(TrainState& state, const Volume& v, bool zscore);
MetricsReport validate(TrainState& state, const Dataset& data,
                       const std::string& split, bool zscore,
                       bool with_features = true);

// ---- checkpointing ----

void checkpoint_save(const TrainState& state, const std::filesystem::path& path);
TrainState checkpoint_load(const std::filesystem::path& path,
                           const ModelConfig& expected_cfg,
                           const TrainConfig& tcfg);

}  // namespace pfda
