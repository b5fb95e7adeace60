#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "csdasa/dataset.hpp"
#include "csdasa/model.hpp"

namespace csdasa {

struct TransferConfig {
  std::string source_id;
  std::string target_id;
  int epochs_pretrain = 100;
  int epochs_adapt = 50;
  double lr = 1e-4;
  int batch = 8;
  double gamma = 1.0;
  KernelConfig kernel = KernelConfig::median();
  std::uint64_t seed = 0;
  int n_labeled_target = 0;  // N_l; 0 = fully unsupervised adaptation
  int patience = 10;         // pretraining early stop on the validation plateau
  double split_fraction = 0.8;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double ce = 0.0;
  double mmd = 0.0;
  double val_accuracy = 0.0;  // source validation during pretraining
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  // MMD of the very first batch pair, before any adaptation update
  double first_step_mmd = -1.0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// The protocol train/test split: a seeded shuffle that never reads label
// values (flipping every target label must leave trained parameters
// untouched, so nothing on the training path may depend on them). Unlabeled
// samples always land in the train pool.
SplitIndices protocol_split(const SubjectDomain& domain, double train_fraction,
                            std::uint64_t seed);

// Label-stratified split, used where labels are legitimately readable
// (the source-side fit/validation sub-split).
SplitIndices stratified_split(const SubjectDomain& domain, double train_fraction,
                              std::uint64_t seed);

// Trains the full network (shared stack, source branch, classifier) on the
// source domain alone with the cross-entropy objective; batches pair the
// source with itself so the attended feature path is exercised. Early-stops
// on the fit/validation plateau and returns the best-validation snapshot
// together with the normalization statistics and the mean source feature map
// used as the attention reference at evaluation time.
Checkpoint pretrain_source(const SubjectDomain& source, const ModelConfig& model,
                           const TransferConfig& config, TrainLog* log = nullptr);

// Freeze-and-adapt: the shared stack is frozen, the target branch is cloned
// from the pretrained source branch, and the subject-specific branches plus
// classifier minimize ce + gamma * sum_i mmd^2 over the branch layers.
// Target labels beyond the first n_labeled_target domain entries are never
// read.
Checkpoint transfer_adapt(const Checkpoint& pretrained, const SubjectDomain& source,
                          const SubjectDomain& target, const TransferConfig& config,
                          TrainLog* log = nullptr);

// Argmax predictions over the given samples (normalized with the
// checkpoint's statistics), in order.
std::vector<int> predict(const Checkpoint& checkpoint, const SubjectDomain& domain,
                         const std::vector<std::size_t>& indices, int batch = 8);

// Accuracy (percent) over the domain's held-out protocol test split.
double evaluate(const Checkpoint& checkpoint, const SubjectDomain& domain,
                const TransferConfig& config);

enum class Variant { Csdasa, NonAtt, SourceOnly };
std::string variant_name(Variant v);

struct PairRun {
  std::string target_id;
  std::string source_id;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double final_ce = 0.0;
  double final_mmd = 0.0;
  int epochs_run = 0;
  // per-epoch adaptation trace (empty for the source-only baseline)
  std::vector<double> epoch_mmd;
};

struct PairFailure {
  std::string target_id;
  std::string source_id;
  std::string error;
};

struct TargetSummary {
  std::string target_id;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation over the source runs
  int n_runs = 0;
};

struct ExperimentResult {
  Variant variant = Variant::Csdasa;
  std::vector<PairRun> runs;          // ordered by (target, source)
  std::vector<PairFailure> failures;  // excluded from the summaries
  std::vector<TargetSummary> summaries;
};

// One-to-one transfer over every ordered (source, target) pair for each
// requested variant. Pretraining is cached per source and shared between
// variants with the same architecture (source-only reuses the full model's
// checkpoints). Independent runs execute on `jobs` worker threads; each run
// is internally single-threaded and results merge in a fixed order, so the
// output does not depend on the job count.
std::vector<ExperimentResult> run_suite(const std::vector<SubjectDomain>& dataset,
                                        const ModelConfig& model, const TransferConfig& config,
                                        const std::vector<Variant>& variants, int jobs = 1);

ExperimentResult run_one_to_one(const std::vector<SubjectDomain>& dataset,
                                const ModelConfig& model, const TransferConfig& config,
                                Variant variant = Variant::Csdasa, int jobs = 1);

// The source-only and single-layer-MMD/no-attention baselines under the
// identical protocol and splits.
std::vector<ExperimentResult> run_baselines(const std::vector<SubjectDomain>& dataset,
                                            const ModelConfig& model,
                                            const TransferConfig& config, int jobs = 1);

void write_results_csv(const std::filesystem::path& path, const ExperimentResult& result);
void write_summary_csv(const std::filesystem::path& path, const ExperimentResult& result);
// Table-style text report: one row per result, one mean/std column per target.
std::string format_table(const std::vector<ExperimentResult>& results);

}  // namespace csdasa
