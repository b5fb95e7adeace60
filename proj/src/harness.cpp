#include "csdasa/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <thread>

#include "csdasa/adam.hpp"
#include "csdasa/rng.hpp"

namespace csdasa {

namespace {

constexpr std::uint64_t kSplitTag = 0x53504c4954ULL;
constexpr std::uint64_t kStreamTag = 0x53545245414dULL;
constexpr std::uint64_t kInitTag = 0x494e4954ULL;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (unsigned char c : s) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

struct SampleRef {
  const SubjectDomain* domain;
  std::size_t index;
};

Tensor make_batch(const std::vector<SampleRef>& refs) {
  const Shape& sample_shape = refs.front().domain->samples[refs.front().index].frames.shape();
  Shape shape;
  shape.push_back(static_cast<std::int64_t>(refs.size()));
  for (std::int64_t d : sample_shape) shape.push_back(d);
  const std::int64_t stride = shape_numel(sample_shape);
  std::vector<double> data(static_cast<std::size_t>(stride) * refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& frames = refs[i].domain->samples[refs[i].index].frames;
    std::copy_n(frames.data().data(), stride, data.data() + static_cast<std::int64_t>(i) * stride);
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

std::vector<int> batch_labels(const std::vector<SampleRef>& refs) {
  std::vector<int> labels;
  labels.reserve(refs.size());
  for (const auto& r : refs) {
    const auto& s = r.domain->samples[r.index];
    if (!s.has_label) throw DataError("batch: sample without label in the supervised pool");
    labels.push_back(s.label);
  }
  return labels;
}

// Shuffled index stream that reshuffles when exhausted. Two streams built
// over the same pool with the same seed yield identical sequences, which is
// what makes source==target adaptation start at zero MMD.
class IndexStream {
 public:
  IndexStream(std::vector<SampleRef> pool, std::uint64_t seed)
      : pool_(std::move(pool)), rng_(seed) {
    if (pool_.empty()) throw DataError("training stream: empty sample pool");
    order_.resize(pool_.size());
    for (std::size_t i = 0; i < pool_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  std::vector<SampleRef> next(std::size_t count) {
    std::vector<SampleRef> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (pos_ == order_.size()) {
        rng_.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(pool_[order_[pos_++]]);
    }
    return out;
  }

  std::size_t pool_size() const { return pool_.size(); }

 private:
  std::vector<SampleRef> pool_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

// The attention reference is the last training batch's source feature maps,
// stored as plain values [k,c,w,h]; evaluation pairs its samples with them
// cyclically. Keeping real per-sample maps (rather than an average) keeps the
// attention score statistics at evaluation time close to what the classifier
// was trained on.
class ReferenceBatch {
 public:
  void reset() { last_.reset(); }

  void add(const Tensor& features) {  // [n,c,w,h]
    last_ = Tensor::from_data(features.shape(),
                              {features.data().begin(), features.data().end()});
  }

  std::optional<Tensor> batch() const { return last_; }

 private:
  std::optional<Tensor> last_;
};

double batch_accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(predictions.size());
}

std::vector<int> predict_batches(const CsdasaParams& params, const ModelConfig& model,
                                 const std::optional<Tensor>& reference, Branch branch,
                                 const SubjectDomain& domain,
                                 const std::vector<std::size_t>& indices, int batch) {
  std::vector<int> predictions;
  predictions.reserve(indices.size());
  for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(batch)) {
    const std::size_t count = std::min<std::size_t>(batch, indices.size() - at);
    std::vector<SampleRef> refs;
    refs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) refs.push_back({&domain, indices[at + i]});
    Tensor logits = forward_eval(make_batch(refs), params, model, reference, branch);
    const std::int64_t classes = logits.dim(1);
    for (std::size_t i = 0; i < count; ++i) {
      int best = 0;
      for (std::int64_t j = 1; j < classes; ++j) {
        if (logits.at({static_cast<std::int64_t>(i), j}) >
            logits.at({static_cast<std::int64_t>(i), best}))
          best = static_cast<int>(j);
      }
      predictions.push_back(best);
    }
  }
  return predictions;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration and splits
// ---------------------------------------------------------------------------

void TransferConfig::validate() const {
  if (batch < 1) throw ConfigError("transfer config: batch must be positive");
  if (gamma < 0.0) throw ConfigError("transfer config: gamma must be non-negative");
  if (gamma > 0.0 && batch < 2) {
    throw ConfigError("transfer config: MMD needs a batch of at least 2 per domain");
  }
  if (!(lr > 0.0)) throw ConfigError("transfer config: learning rate must be positive");
  if (epochs_pretrain < 1) throw ConfigError("transfer config: pretraining needs epochs");
  if (epochs_adapt < 0) throw ConfigError("transfer config: negative adaptation epochs");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ConfigError("transfer config: split fraction must be in (0,1)");
  }
  if (n_labeled_target < 0) throw ConfigError("transfer config: negative N_l");
}

SplitIndices protocol_split(const SubjectDomain& domain, double train_fraction,
                            std::uint64_t seed) {
  if (domain.samples.empty()) throw DataError("split: empty domain " + domain.subject_id);
  std::vector<std::size_t> order(domain.samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(Rng::mix(seed, fnv1a(domain.subject_id), kSplitTag));
  rng.shuffle(order);

  const auto n_train = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(order.size())));
  SplitIndices split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t idx = order[i];
    if (i < n_train) {
      split.train.push_back(idx);
    } else if (!domain.samples[idx].has_label) {
      split.train.push_back(idx);  // accuracy needs labels; unlabeled stay trainable
    } else {
      split.test.push_back(idx);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

SplitIndices stratified_split(const SubjectDomain& domain, double train_fraction,
                              std::uint64_t seed) {
  if (domain.samples.empty()) throw DataError("split: empty domain " + domain.subject_id);
  std::map<int, std::vector<std::size_t>> by_class;
  SplitIndices split;
  for (std::size_t i = 0; i < domain.samples.size(); ++i) {
    if (domain.samples[i].has_label) {
      by_class[domain.samples[i].label].push_back(i);
    } else {
      split.train.push_back(i);
    }
  }
  Rng rng(Rng::mix(seed, fnv1a(domain.subject_id), kSplitTag + 1));
  for (auto& [label, indices] : by_class) {
    rng.shuffle(indices);
    const auto n_train = static_cast<std::size_t>(
        std::floor(train_fraction * static_cast<double>(indices.size())));
    for (std::size_t i = 0; i < indices.size(); ++i) {
      (i < n_train ? split.train : split.test).push_back(indices[i]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// ---------------------------------------------------------------------------
// pretraining
// ---------------------------------------------------------------------------

Checkpoint pretrain_source(const SubjectDomain& source, const ModelConfig& model,
                           const TransferConfig& config, TrainLog* log) {
  config.validate();
  model.validate();
  source.check_label_order();
  if (source.labeled_count() < 2) {
    throw DataError("pretrain: source domain " + source.subject_id + " has no labeled data");
  }

  // protocol split first, then a stratified fit/validation sub-split of the
  // train pool (source labels are legitimately readable)
  const SplitIndices domain_split = protocol_split(source, config.split_fraction, config.seed);
  SubjectDomain train_pool;
  train_pool.subject_id = source.subject_id;
  for (std::size_t idx : domain_split.train) train_pool.samples.push_back(source.samples[idx]);

  const ChannelStats stats = fit_channel_stats(train_pool);
  const SubjectDomain normalized = normalize_images(train_pool, stats);
  const SplitIndices fit_split = stratified_split(normalized, config.split_fraction, config.seed);
  if (fit_split.train.empty() || fit_split.test.empty()) {
    throw DataError("pretrain: source domain " + source.subject_id +
                    " is too small for a fit/validation split");
  }

  Rng init_rng(Rng::mix(config.seed, fnv1a(source.subject_id), kInitTag));
  CsdasaParams params = CsdasaParams::init(model, init_rng);
  AdamOptimizer optimizer(params.all_parameters(), {.lr = config.lr});

  std::vector<SampleRef> fit_pool;
  for (std::size_t idx : fit_split.train) fit_pool.push_back({&normalized, idx});
  IndexStream stream(fit_pool, Rng::mix(config.seed, fnv1a(source.subject_id), kStreamTag));
  const std::size_t steps_per_epoch =
      (fit_pool.size() + static_cast<std::size_t>(config.batch) - 1) /
      static_cast<std::size_t>(config.batch);

  double best_val = -1.0;
  CsdasaParams best_params = params.copy();
  std::optional<Tensor> best_reference;
  int epochs_since_best = 0;


  for (int epoch = 0; epoch < config.epochs_pretrain; ++epoch) {
    ReferenceBatch reference;
    double epoch_ce = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t want = std::min<std::size_t>(
          config.batch, fit_pool.size() - step * static_cast<std::size_t>(config.batch));
      auto refs = stream.next(std::max<std::size_t>(want, 1));
      Tensor x = make_batch(refs);
      // counterpart batch: the same samples rotated by one, so the attention
      // sees cross-sample pairs just like adaptation and evaluation do
      std::vector<SampleRef> rotated(refs.begin() + 1, refs.end());
      rotated.push_back(refs.front());
      Tensor x_pair = refs.size() > 1 ? make_batch(rotated) : x;
      ForwardArtifacts art = forward_pair(x, x_pair, params, model);
      Tensor ce = cross_entropy(art.logits, batch_labels(refs));
      const double ce_value = ce.item();
      if (!std::isfinite(ce_value)) {
        throw TrainingError("pretraining diverged on " + source.subject_id + " at epoch " +
                            std::to_string(epoch) + " step " + std::to_string(step));
      }
      epoch_ce += ce_value;
      backward(ce);
      optimizer.step();
      reference.add(art.layer_features.back().first);
    }


    // validation with this epoch's reference
    std::vector<int> val_labels;
    for (std::size_t idx : fit_split.test) val_labels.push_back(normalized.samples[idx].label);
    const auto predictions = predict_batches(params, model, reference.batch(), Branch::Source,
                                             normalized, fit_split.test, config.batch);
    const double val_acc = batch_accuracy(predictions, val_labels);
    if (log) {
      log->epochs.push_back(
          {epoch, epoch_ce / static_cast<double>(steps_per_epoch), 0.0, val_acc});
    }

    if (val_acc > best_val) {
      best_val = val_acc;
      best_params = params.copy();
      best_reference = reference.batch();
      epochs_since_best = 0;
    } else if (++epochs_since_best >= config.patience) {
      break;
    }
  }

  Checkpoint ckpt;
  ckpt.model = model;
  ckpt.params = std::move(best_params);
  ckpt.norm = stats;
  ckpt.attention_reference = best_reference;
  ckpt.source_id = source.subject_id;
  ckpt.seed = config.seed;
  ckpt.val_accuracy = best_val;
  return ckpt;
}

// ---------------------------------------------------------------------------
// adaptation
// ---------------------------------------------------------------------------

Checkpoint transfer_adapt(const Checkpoint& pretrained, const SubjectDomain& source,
                          const SubjectDomain& target, const TransferConfig& config,
                          TrainLog* log) {
  config.validate();
  if (config.n_labeled_target > static_cast<int>(target.samples.size())) {
    throw ConfigError("transfer: N_l exceeds the target domain size");
  }
  const ModelConfig& model = pretrained.model;

  CsdasaParams params = pretrained.params.copy();
  if (!params.has_target_branch()) params.create_target_branch();
  params.freeze_shared(true);

  // both domains standardized with the SOURCE statistics
  const SubjectDomain source_n = normalize_images(source, pretrained.norm);
  const SubjectDomain target_n = normalize_images(target, pretrained.norm);

  const SplitIndices source_split = protocol_split(source_n, config.split_fraction, config.seed);
  const SplitIndices target_split = protocol_split(target_n, config.split_fraction, config.seed);

  // supervised pool: source train samples, plus the train part of the first
  // N_l target samples (the only target labels that may be read)
  std::vector<SampleRef> supervised;
  for (std::size_t idx : source_split.train) supervised.push_back({&source_n, idx});
  if (config.n_labeled_target > 0) {
    for (std::size_t idx : target_split.train) {
      if (idx < static_cast<std::size_t>(config.n_labeled_target)) {
        supervised.push_back({&target_n, idx});
      }
    }
  }
  std::vector<SampleRef> target_pool;
  for (std::size_t idx : target_split.train) target_pool.push_back({&target_n, idx});
  if (supervised.empty() || target_pool.empty()) {
    throw DataError("transfer: empty training pool");
  }

  // identical stream seeds for identical pools keep source==target batches in
  // lockstep, so the no-gap case starts at zero MMD
  IndexStream source_stream(supervised,
                            Rng::mix(config.seed, fnv1a(source.subject_id), kStreamTag));
  IndexStream target_stream(target_pool,
                            Rng::mix(config.seed, fnv1a(target.subject_id), kStreamTag));

  AdamOptimizer optimizer(params.adaptation_parameters(), {.lr = config.lr});
  const std::size_t steps_per_epoch =
      (std::max(source_stream.pool_size(), target_stream.pool_size()) +
       static_cast<std::size_t>(config.batch) - 1) /
      static_cast<std::size_t>(config.batch);

  ReferenceBatch reference;
  for (int epoch = 0; epoch < config.epochs_adapt; ++epoch) {
    reference.reset();
    double epoch_ce = 0.0, epoch_mmd = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      auto src_refs = source_stream.next(static_cast<std::size_t>(config.batch));
      auto tgt_refs = target_stream.next(static_cast<std::size_t>(config.batch));
      Tensor x_s = make_batch(src_refs);
      Tensor x_t = make_batch(tgt_refs);
      ForwardArtifacts art = forward_pair(x_s, x_t, params, model);
      Tensor ce = cross_entropy(art.logits, batch_labels(src_refs));
      Tensor l_mmd = mmd_transfer_loss(mmd_feature_pairs(art, model.mmd_all_layers),
                                       config.kernel);
      Tensor loss = total_loss(ce, l_mmd, config.gamma);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value)) {
        throw TrainingError("adaptation diverged (" + source.subject_id + " -> " +
                            target.subject_id + ") at epoch " + std::to_string(epoch) +
                            " step " + std::to_string(step));
      }
      epoch_ce += ce.item();
      epoch_mmd += l_mmd.item();
      if (log && epoch == 0 && step == 0) log->first_step_mmd = l_mmd.item();
      backward(loss);
      optimizer.step();
      reference.add(art.layer_features.back().first);
    }
    if (log) {
      log->epochs.push_back({epoch, epoch_ce / static_cast<double>(steps_per_epoch),
                             epoch_mmd / static_cast<double>(steps_per_epoch), 0.0});
    }
  }

  Checkpoint ckpt;
  ckpt.model = model;
  ckpt.params = std::move(params);
  ckpt.norm = pretrained.norm;
  ckpt.attention_reference =
      config.epochs_adapt > 0 ? reference.batch() : pretrained.attention_reference;
  if (!ckpt.attention_reference.has_value()) {
    ckpt.attention_reference = pretrained.attention_reference;
  }
  ckpt.source_id = source.subject_id;
  ckpt.target_id = target.subject_id;
  ckpt.seed = config.seed;
  ckpt.val_accuracy = pretrained.val_accuracy;
  return ckpt;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

std::vector<int> predict(const Checkpoint& checkpoint, const SubjectDomain& domain,
                         const std::vector<std::size_t>& indices, int batch) {
  const SubjectDomain normalized = normalize_images(domain, checkpoint.norm);
  const Branch branch = (checkpoint.params.has_target_branch() &&
                         checkpoint.target_id == domain.subject_id)
                            ? Branch::Target
                            : Branch::Source;
  return predict_batches(checkpoint.params, checkpoint.model, checkpoint.attention_reference,
                         branch, normalized, indices, batch);
}

double evaluate(const Checkpoint& checkpoint, const SubjectDomain& domain,
                const TransferConfig& config) {
  const SplitIndices split = protocol_split(domain, config.split_fraction, config.seed);
  if (split.test.empty()) throw DataError("evaluate: no held-out samples for " + domain.subject_id);
  std::vector<int> labels;
  labels.reserve(split.test.size());
  for (std::size_t idx : split.test) labels.push_back(domain.samples[idx].label);
  const auto predictions = predict(checkpoint, domain, split.test, config.batch);
  return batch_accuracy(predictions, labels);
}

// ---------------------------------------------------------------------------
// the one-to-one sweep
// ---------------------------------------------------------------------------

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Csdasa:
      return "CS-DASA";
    case Variant::NonAtt:
      return "CS-DASA (nonatt)";
    case Variant::SourceOnly:
      return "source-only";
  }
  return "?";
}

namespace {

ModelConfig variant_model(const ModelConfig& base, Variant v) {
  ModelConfig m = base;
  if (v == Variant::NonAtt) {
    m.attention = false;
    m.mmd_all_layers = false;
  }
  return m;
}

// architecture key for sharing pretrained checkpoints between variants
int arch_key(const ModelConfig& m) { return m.attention ? 1 : 0; }

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const int n_workers = std::min<int>(jobs, static_cast<int>(count));
  workers.reserve(static_cast<std::size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : workers) t.join();
}

void summarize(ExperimentResult& result, const std::vector<std::string>& target_order) {
  result.summaries.clear();
  for (const auto& target : target_order) {
    TargetSummary s;
    s.target_id = target;
    std::vector<double> values;
    for (const auto& run : result.runs) {
      if (run.target_id == target) values.push_back(run.accuracy);
    }
    s.n_runs = static_cast<int>(values.size());
    if (!values.empty()) {
      double mean = 0.0;
      for (double v : values) mean += v;
      mean /= static_cast<double>(values.size());
      double var = 0.0;
      for (double v : values) var += (v - mean) * (v - mean);
      s.mean = mean;
      s.stddev = values.size() > 1 ? std::sqrt(var / static_cast<double>(values.size() - 1)) : 0.0;
    }
    result.summaries.push_back(std::move(s));
  }
}

}  // namespace

std::vector<ExperimentResult> run_suite(const std::vector<SubjectDomain>& dataset,
                                        const ModelConfig& model, const TransferConfig& config,
                                        const std::vector<Variant>& variants, int jobs) {
  if (dataset.size() < 2) throw DataError("run_suite: need at least two subjects");
  config.validate();
  for (const auto& d : dataset) {
    if (d.samples.empty()) throw DataError("run_suite: subject " + d.subject_id + " is empty");
  }

  // phase 1: pretrain per (architecture, source), shared across variants
  struct PretrainSlot {
    std::optional<Checkpoint> checkpoint;
    TrainLog log;
    std::string error;
  };
  std::vector<int> arch_keys;
  std::vector<ModelConfig> arch_models;
  for (Variant v : variants) {
    const ModelConfig m = variant_model(model, v);
    if (std::find(arch_keys.begin(), arch_keys.end(), arch_key(m)) == arch_keys.end()) {
      arch_keys.push_back(arch_key(m));
      arch_models.push_back(m);
    }
  }

  std::map<std::pair<int, std::string>, PretrainSlot> pretrains;
  std::vector<std::pair<int, std::size_t>> pretrain_tasks;  // (arch index, subject index)
  for (std::size_t a = 0; a < arch_models.size(); ++a) {
    for (std::size_t s = 0; s < dataset.size(); ++s) {
      pretrains[{arch_keys[a], dataset[s].subject_id}] = {};
      pretrain_tasks.emplace_back(static_cast<int>(a), s);
    }
  }
  parallel_for(pretrain_tasks.size(), jobs, [&](std::size_t i) {
    const auto [a, s] = pretrain_tasks[i];
    auto& slot = pretrains.at({arch_keys[static_cast<std::size_t>(a)], dataset[s].subject_id});
    try {
      slot.checkpoint = pretrain_source(dataset[s], arch_models[static_cast<std::size_t>(a)],
                                        config, &slot.log);
    } catch (const std::exception& e) {
      slot.error = e.what();
    }
  });

  // phase 2: every ordered pair for every variant
  struct PairTask {
    std::size_t variant_index;
    std::size_t source_index;
    std::size_t target_index;
  };
  std::vector<PairTask> tasks;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (std::size_t t = 0; t < dataset.size(); ++t) {
      for (std::size_t s = 0; s < dataset.size(); ++s) {
        if (s == t) continue;
        tasks.push_back({v, s, t});
      }
    }
  }

  struct TaskResult {
    bool ok = false;
    PairRun run;
    PairFailure failure;
  };
  std::vector<TaskResult> results(tasks.size());

  parallel_for(tasks.size(), jobs, [&](std::size_t i) {
    const PairTask& task = tasks[i];
    const Variant variant = variants[task.variant_index];
    const SubjectDomain& source = dataset[task.source_index];
    const SubjectDomain& target = dataset[task.target_index];
    TaskResult& out = results[i];
    out.run.source_id = source.subject_id;
    out.run.target_id = target.subject_id;
    out.run.seed = config.seed;
    out.failure = {target.subject_id, source.subject_id, ""};
    try {
      const ModelConfig m = variant_model(model, variant);
      const auto& slot = pretrains.at({arch_key(m), source.subject_id});
      if (!slot.checkpoint.has_value()) {
        throw TrainingError("pretraining failed: " + slot.error);
      }
      if (variant == Variant::SourceOnly) {
        out.run.accuracy = evaluate(*slot.checkpoint, target, config);
        out.run.final_ce = slot.log.epochs.empty() ? 0.0 : slot.log.epochs.back().ce;
        out.run.final_mmd = 0.0;
        out.run.epochs_run = static_cast<int>(slot.log.epochs.size());
      } else {
        TrainLog adapt_log;
        Checkpoint adapted = transfer_adapt(*slot.checkpoint, source, target, config, &adapt_log);
        out.run.accuracy = evaluate(adapted, target, config);
        out.run.final_ce = adapt_log.epochs.empty() ? 0.0 : adapt_log.epochs.back().ce;
        out.run.final_mmd = adapt_log.epochs.empty() ? 0.0 : adapt_log.epochs.back().mmd;
        out.run.epochs_run = static_cast<int>(adapt_log.epochs.size());
        for (const auto& e : adapt_log.epochs) out.run.epoch_mmd.push_back(e.mmd);
      }
      out.ok = true;
    } catch (const std::exception& e) {
      out.failure.error = e.what();
    }
  });

  // fixed-order merge
  std::vector<std::string> target_order;
  for (const auto& d : dataset) target_order.push_back(d.subject_id);
  std::vector<ExperimentResult> suite(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v) suite[v].variant = variants[v];
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto& result = suite[tasks[i].variant_index];
    if (results[i].ok) {
      result.runs.push_back(std::move(results[i].run));
    } else {
      result.failures.push_back(std::move(results[i].failure));
    }
  }
  for (auto& result : suite) summarize(result, target_order);
  return suite;
}

ExperimentResult run_one_to_one(const std::vector<SubjectDomain>& dataset,
                                const ModelConfig& model, const TransferConfig& config,
                                Variant variant, int jobs) {
  return run_suite(dataset, model, config, {variant}, jobs)[0];
}

std::vector<ExperimentResult> run_baselines(const std::vector<SubjectDomain>& dataset,
                                            const ModelConfig& model,
                                            const TransferConfig& config, int jobs) {
  return run_suite(dataset, model, config, {Variant::SourceOnly, Variant::NonAtt}, jobs);
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

namespace {

std::string format_double(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

}  // namespace

void write_results_csv(const std::filesystem::path& path, const ExperimentResult& result) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_results_csv: cannot open " + path.string());
  out << "target_id,source_id,seed,accuracy,final_ce,final_mmd,epochs_run\n";
  for (const auto& run : result.runs) {
    out << run.target_id << ',' << run.source_id << ',' << run.seed << ','
        << format_double("%.6f", run.accuracy) << ',' << format_double("%.10g", run.final_ce)
        << ',' << format_double("%.10g", run.final_mmd) << ',' << run.epochs_run << '\n';
  }
}

void write_summary_csv(const std::filesystem::path& path, const ExperimentResult& result) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_summary_csv: cannot open " + path.string());
  out << "target_id,mean,std,n_runs\n";
  for (const auto& s : result.summaries) {
    out << s.target_id << ',' << format_double("%.6f", s.mean) << ','
        << format_double("%.6f", s.stddev) << ',' << s.n_runs << '\n';
  }
}

std::string format_table(const std::vector<ExperimentResult>& results) {
  std::ostringstream os;
  if (results.empty()) return "";
  std::size_t name_width = 6;
  for (const auto& r : results) name_width = std::max(name_width, variant_name(r.variant).size());

  os << std::left << std::setw(static_cast<int>(name_width) + 2) << "method";
  for (const auto& s : results.front().summaries) os << std::setw(12) << s.target_id;
  os << '\n';
  for (const auto& r : results) {
    os << std::setw(static_cast<int>(name_width) + 2) << variant_name(r.variant);
    for (const auto& s : r.summaries) {
      char cell[32];
      std::snprintf(cell, sizeof(cell), "%.1f/%.1f", s.mean, s.stddev);
      os << std::setw(12) << cell;
    }
    os << '\n';
  }
  if (std::any_of(results.begin(), results.end(),
                  [](const ExperimentResult& r) { return !r.failures.empty(); })) {
    os << "failed pairs:\n";
    for (const auto& r : results) {
      for (const auto& f : r.failures) {
        os << "  " << variant_name(r.variant) << " " << f.source_id << "->" << f.target_id
           << ": " << f.error << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace csdasa
