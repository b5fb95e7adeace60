#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "csdasa/harness.hpp"
#include "csdasa/rng.hpp"
#include "csdasa/synth.hpp"

using namespace csdasa;

namespace {

namespace fs = std::filesystem;

ModelConfig micro_model() {
  ModelConfig cfg;
  cfg.frames = 2;
  cfg.bands = 3;
  cfg.width = 8;
  cfg.height = 8;
  cfg.convlstm_channels = {3};
  cfg.specific_kernels = {4, 3};
  cfg.classifier_conv_kernels = 2;
  cfg.fc_units = {16};
  cfg.gamma = 1.0;
  cfg.kernel = KernelConfig::median();
  return cfg;
}

SynthConfig micro_synth(int n_subjects, int n_per, ShiftSpec shift, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.n_subjects = n_subjects;
  cfg.n_per_subject = n_per;
  cfg.electrodes = 12;
  cfg.shift = shift;
  cfg.seed = seed;
  cfg.imaging.frames = 2;
  cfg.imaging.window_len = 32;
  cfg.imaging.sample_rate = 64.0;
  cfg.imaging.grid = {8, 8};
  return cfg;
}

TransferConfig micro_transfer(std::uint64_t seed, int pretrain = 12, int adapt = 4) {
  TransferConfig cfg;
  cfg.epochs_pretrain = pretrain;
  cfg.epochs_adapt = adapt;
  cfg.lr = 1e-3;
  cfg.batch = 8;
  cfg.gamma = 1.0;
  cfg.seed = seed;
  cfg.patience = 4;
  return cfg;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("splits: determinism, coverage, label independence") {
  auto subjects = synth_subjects(micro_synth(2, 40, ShiftSpec::none(), 11));
  const SubjectDomain& d = subjects[0];

  SplitIndices a = protocol_split(d, 0.8, 7);
  SplitIndices b = protocol_split(d, 0.8, 7);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);
  CHECK(a.train.size() + a.test.size() == d.samples.size());
  CHECK(a.train.size() == 32);

  SplitIndices c = protocol_split(d, 0.8, 8);
  CHECK(a.train != c.train);

  // flipping label values must not move a single sample
  SubjectDomain flipped = d;
  for (auto& s : flipped.samples) s.label = (s.label + 1) % 4;
  SplitIndices f = protocol_split(flipped, 0.8, 7);
  CHECK(a.train == f.train);
  CHECK(a.test == f.test);

  // the stratified split balances classes in both halves
  SplitIndices strat = stratified_split(d, 0.75, 7);
  std::array<int, 4> train_counts{0, 0, 0, 0};
  for (std::size_t idx : strat.train) train_counts[static_cast<std::size_t>(d.samples[idx].label)]++;
  for (int count : train_counts) CHECK(count == 7);  // 10 per class, 75% -> 7
}

TEST_CASE("synth: identical seeds are bit-identical, shifts change the data") {
  auto a = synth_subjects(micro_synth(2, 6, ShiftSpec::medium(), 42));
  auto b = synth_subjects(micro_synth(2, 6, ShiftSpec::medium(), 42));
  REQUIRE(a.size() == b.size());
  for (std::size_t s = 0; s < a.size(); ++s) {
    REQUIRE(a[s].samples.size() == b[s].samples.size());
    for (std::size_t i = 0; i < a[s].samples.size(); ++i) {
      const auto av = a[s].samples[i].frames.data();
      const auto bv = b[s].samples[i].frames.data();
      for (std::size_t j = 0; j < av.size(); ++j) CHECK(av[j] == bv[j]);
    }
  }

  auto c = synth_subjects(micro_synth(2, 6, ShiftSpec::medium(), 43));
  bool differs = false;
  for (std::size_t j = 0; j < a[0].samples[0].frames.data().size(); ++j) {
    if (a[0].samples[0].frames.data()[j] != c[0].samples[0].frames.data()[j]) differs = true;
  }
  CHECK(differs);

  CHECK_THROWS_AS(synth_subjects(micro_synth(1, 6, ShiftSpec::none(), 1)), ConfigError);
}

TEST_CASE("pretraining learns a separable task and is deterministic") {
  SynthConfig scfg = micro_synth(2, 160, ShiftSpec::none(), 21);
  scfg.n_classes = 2;
  scfg.noise = 0.05;
  auto subjects = synth_subjects(scfg);
  TransferConfig tcfg = micro_transfer(21, /*pretrain=*/50, /*adapt=*/0);
  tcfg.patience = 8;

  TrainLog log;
  Checkpoint ckpt = pretrain_source(subjects[0], micro_model(), tcfg, &log);
  CHECK(ckpt.val_accuracy >= 95.0);
  CHECK(static_cast<int>(log.epochs.size()) <= 50);
  CHECK(ckpt.attention_reference.has_value());

  // identical seed, identical trajectory
  TrainLog log2;
  Checkpoint ckpt2 = pretrain_source(subjects[0], micro_model(), tcfg, &log2);
  REQUIRE(log.epochs.size() == log2.epochs.size());
  CHECK(log.epochs.back().ce == log2.epochs.back().ce);
  CHECK(parameter_checksum(ckpt.params) == parameter_checksum(ckpt2.params));

  // identity-attention fallback stays close to the training-path accuracy
  const SplitIndices split = protocol_split(subjects[0], tcfg.split_fraction, tcfg.seed);
  std::vector<int> labels;
  for (std::size_t idx : split.train) labels.push_back(subjects[0].samples[idx].label);

  Checkpoint no_ref = ckpt;  // shared params are fine for a read-only pass
  no_ref.attention_reference.reset();
  const auto with_ref = predict(ckpt, subjects[0], split.train);
  const auto fallback = predict(no_ref, subjects[0], split.train);
  double acc_ref = 0.0, acc_fb = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    acc_ref += with_ref[i] == labels[i];
    acc_fb += fallback[i] == labels[i];
  }
  acc_ref *= 100.0 / static_cast<double>(labels.size());
  acc_fb *= 100.0 / static_cast<double>(labels.size());
  CHECK(std::fabs(acc_ref - acc_fb) <= 5.0);
}

TEST_CASE("zero shift transfers without loss; pretraining never touches the target") {
  double drop_sum = 0.0;
  for (std::uint64_t seed : {31, 32, 33}) {
    auto subjects = synth_subjects(micro_synth(2, 240, ShiftSpec::none(), seed));
    TransferConfig tcfg = micro_transfer(seed, 14, 0);
    Checkpoint ckpt = pretrain_source(subjects[0], micro_model(), tcfg);
    const double on_source = evaluate(ckpt, subjects[0], tcfg);
    const double on_target = evaluate(ckpt, subjects[1], tcfg);
    drop_sum += on_source - on_target;
  }
  CHECK(drop_sum / 3.0 <= 4.0);  // identical distributions, split-level noise only
}

TEST_CASE("source-only accuracy degrades monotonically with the shift level") {
  const std::array<ShiftSpec, 3> levels{ShiftSpec::low(), ShiftSpec::medium(),
                                        ShiftSpec::high()};
  std::array<double, 3> mean_acc{0.0, 0.0, 0.0};
  for (std::uint64_t seed : {41, 42, 43, 44, 45}) {
    for (std::size_t level = 0; level < levels.size(); ++level) {
      auto subjects = synth_subjects(micro_synth(2, 160, levels[level], seed));
      TransferConfig tcfg = micro_transfer(seed, 10, 0);
      Checkpoint ckpt = pretrain_source(subjects[0], micro_model(), tcfg);
      mean_acc[level] += evaluate(ckpt, subjects[1], tcfg) / 5.0;
    }
  }
  CHECK(mean_acc[0] >= mean_acc[1]);
  CHECK(mean_acc[1] >= mean_acc[2]);
}

TEST_CASE("adaptation: freeze contract, no-gap case, label-flip checksum") {
  auto subjects = synth_subjects(micro_synth(2, 160, ShiftSpec::none(), 51));
  TransferConfig tcfg = micro_transfer(51, 10, 3);
  ModelConfig model = micro_model();
  Checkpoint pre = pretrain_source(subjects[0], model, tcfg);

  // freeze contract: shared parameters bit-identical across adaptation
  std::vector<std::vector<double>> shared_before;
  for (const Tensor& t : pre.params.shared_parameters())
    shared_before.emplace_back(t.data().begin(), t.data().end());

  TrainLog log;
  Checkpoint adapted = transfer_adapt(pre, subjects[0], subjects[1], tcfg, &log);
  const auto shared_after = adapted.params.shared_parameters();
  for (std::size_t i = 0; i < shared_before.size(); ++i) {
    const auto d = shared_after[i].data();
    REQUIRE(d.size() == shared_before[i].size());
    for (std::size_t j = 0; j < d.size(); ++j) CHECK(d[j] == shared_before[i][j]);
  }
  // and something else did train
  CHECK(parameter_checksum(adapted.params) != parameter_checksum(pre.params));
  CHECK(static_cast<int>(log.epochs.size()) == 3);

  // source == target: identical streams and branch copies make adaptation
  // start at zero MMD (the branches then diverge, CE reaches them
  // asymmetrically, so only the first pre-update measurement is exact)
  TrainLog self_log;
  Checkpoint self_adapted = transfer_adapt(pre, subjects[0], subjects[0], tcfg, &self_log);
  CHECK(self_log.first_step_mmd >= 0.0);
  CHECK(self_log.first_step_mmd <= 1e-6);
  const double before_acc = evaluate(pre, subjects[0], tcfg);
  const double after_acc = evaluate(self_adapted, subjects[0], tcfg);
  CHECK(after_acc >= before_acc - 5.0);

  // N_l = 0: flipping every target label leaves the trained parameters
  // checksum-identical
  SubjectDomain flipped = subjects[1];
  for (auto& s : flipped.samples) s.label = (s.label + 1) % 4;
  Checkpoint a1 = transfer_adapt(pre, subjects[0], subjects[1], tcfg);
  Checkpoint a2 = transfer_adapt(pre, subjects[0], flipped, tcfg);
  CHECK(parameter_checksum(a1.params) == parameter_checksum(a2.params));

  // N_l bounds
  TransferConfig bad = tcfg;
  bad.n_labeled_target = 1000;
  CHECK_THROWS_AS(transfer_adapt(pre, subjects[0], subjects[1], bad), ConfigError);
  TransferConfig semi = tcfg;
  semi.n_labeled_target = 8;
  semi.epochs_adapt = 1;
  CHECK_NOTHROW(transfer_adapt(pre, subjects[0], subjects[1], semi));

  // MMD needs two samples per batch
  TransferConfig tiny = tcfg;
  tiny.batch = 1;
  CHECK_THROWS_AS(tiny.validate(), ConfigError);
}

TEST_CASE("evaluate: chance level, memorization, confusion-matrix agreement") {
  ModelConfig model = micro_model();

  // random weights stay at chance: labels independent of the (noise) inputs,
  // so any fixed predictor scores 25% in expectation
  double acc_sum = 0.0;
  int n_evals = 0;
  std::vector<SubjectDomain> subjects;
  {
    Rng noise_rng(61);
    for (int s = 0; s < 2; ++s) {
      SubjectDomain d;
      d.subject_id = "N" + std::to_string(s + 1);
      for (int i = 0; i < 120; ++i) {
        MultiFrameEEGImage img;
        std::vector<double> data(2 * 3 * 8 * 8);
        for (double& v : data) v = noise_rng.normal();
        img.frames = Tensor::from_data({2, 3, 8, 8}, std::move(data));
        img.label = i % 4;
        img.has_label = true;
        d.samples.push_back(std::move(img));
      }
      subjects.push_back(std::move(d));
    }
  }
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    Rng rng(seed);
    Checkpoint random_ckpt;
    random_ckpt.model = model;
    random_ckpt.params = CsdasaParams::init(model, rng);
    random_ckpt.norm.mean = {0.0, 0.0, 0.0};
    random_ckpt.norm.stddev = {1.0, 1.0, 1.0};
    random_ckpt.norm.centered_only = {false, false, false};
    random_ckpt.source_id = "S1";
    random_ckpt.seed = seed;
    TransferConfig tcfg = micro_transfer(seed);
    for (const auto& domain : subjects) {
      acc_sum += evaluate(random_ckpt, domain, tcfg);
      ++n_evals;
    }
  }
  const double chance = acc_sum / n_evals;
  CHECK(chance >= 18.0);
  CHECK(chance <= 32.0);

  // a tiny set is memorized perfectly
  SynthConfig tiny_cfg = micro_synth(2, 16, ShiftSpec::none(), 62);
  tiny_cfg.noise = 0.02;
  auto tiny = synth_subjects(tiny_cfg);
  TransferConfig tcfg = micro_transfer(62, 60, 0);
  tcfg.patience = 60;  // keep training to memorization
  Checkpoint fit = pretrain_source(tiny[0], model, tcfg);
  const SplitIndices split = protocol_split(tiny[0], tcfg.split_fraction, tcfg.seed);
  const auto predictions = predict(fit, tiny[0], split.train);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < split.train.size(); ++i) {
    if (predictions[i] == tiny[0].samples[split.train[i]].label) ++hits;
  }
  CHECK(hits == split.train.size());

  // accuracy equals the confusion-matrix trace exactly
  const double acc = evaluate(fit, tiny[1], tcfg);
  const SplitIndices tsplit = protocol_split(tiny[1], tcfg.split_fraction, tcfg.seed);
  const auto preds = predict(fit, tiny[1], tsplit.test);
  std::array<std::array<int, 4>, 4> confusion{};
  for (std::size_t i = 0; i < tsplit.test.size(); ++i) {
    confusion[static_cast<std::size_t>(tiny[1].samples[tsplit.test[i]].label)]
             [static_cast<std::size_t>(preds[i])]++;
  }
  int trace = 0, total = 0;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) {
      total += confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
      if (a == b) trace += confusion[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)];
    }
  CHECK(acc == 100.0 * trace / total);
}

TEST_CASE("one-to-one sweep: row counts, summaries, failures, file determinism") {
  auto subjects = synth_subjects(micro_synth(3, 64, ShiftSpec::low(), 71));
  TransferConfig tcfg = micro_transfer(71, 3, 1);
  ModelConfig model = micro_model();

  auto suite = run_suite(subjects, model, tcfg,
                         {Variant::Csdasa, Variant::SourceOnly, Variant::NonAtt}, 2);
  REQUIRE(suite.size() == 3);
  for (const auto& result : suite) {
    CHECK(result.runs.size() == 6);  // 3 subjects -> 6 ordered pairs
    CHECK(result.failures.empty());
    REQUIRE(result.summaries.size() == 3);
    for (const auto& s : result.summaries) CHECK(s.n_runs == 2);
  }

  // spreadsheet-style recomputation of the summary
  for (const auto& s : suite[0].summaries) {
    std::vector<double> vals;
    for (const auto& run : suite[0].runs) {
      if (run.target_id == s.target_id) vals.push_back(run.accuracy);
    }
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const double stddev = std::sqrt(var / static_cast<double>(vals.size() - 1));
    CHECK(s.mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(s.stddev == doctest::Approx(stddev).epsilon(1e-12));
  }

  // identical config -> byte-identical CSVs, independent of the job count
  auto again = run_suite(subjects, model, tcfg,
                         {Variant::Csdasa, Variant::SourceOnly, Variant::NonAtt}, 1);
  const auto dir = fs::temp_directory_path();
  write_results_csv(dir / "csdasa_a.csv", suite[0]);
  write_results_csv(dir / "csdasa_b.csv", again[0]);
  CHECK(read_bytes(dir / "csdasa_a.csv") == read_bytes(dir / "csdasa_b.csv"));
  write_summary_csv(dir / "csdasa_sa.csv", suite[2]);
  write_summary_csv(dir / "csdasa_sb.csv", again[2]);
  CHECK(read_bytes(dir / "csdasa_sa.csv") == read_bytes(dir / "csdasa_sb.csv"));

  const std::string table = format_table(suite);
  CHECK(table.find("CS-DASA") != std::string::npos);
  CHECK(table.find("source-only") != std::string::npos);
  CHECK(table.find("S3") != std::string::npos);

  for (auto name : {"csdasa_a.csv", "csdasa_b.csv", "csdasa_sa.csv", "csdasa_sb.csv"})
    fs::remove(dir / name);
}

TEST_CASE("a failing pair is recorded and the sweep continues") {
  auto subjects = synth_subjects(micro_synth(2, 64, ShiftSpec::none(), 81));
  // a source with a single labeled sample cannot build a validation split
  SubjectDomain cripple;
  cripple.subject_id = "S3";
  cripple.samples.push_back(subjects[0].samples[0]);
  cripple.samples.push_back(subjects[0].samples[1]);
  auto dataset = subjects;
  dataset.push_back(cripple);

  TransferConfig tcfg = micro_transfer(81, 2, 1);
  auto result = run_one_to_one(dataset, micro_model(), tcfg, Variant::Csdasa, 2);
  CHECK(result.runs.size() + result.failures.size() == 6);
  CHECK(!result.failures.empty());
  for (const auto& f : result.failures) CHECK(f.source_id == "S3");
  // failed pairs are excluded from the summaries
  for (const auto& s : result.summaries) {
    if (s.target_id == "S1" || s.target_id == "S2") CHECK(s.n_runs == 1);
  }
}

TEST_CASE("two identical synthetic subjects transfer symmetrically") {
  auto subjects = synth_subjects(micro_synth(2, 240, ShiftSpec::none(), 91));
  TransferConfig tcfg = micro_transfer(91, 10, 2);
  auto result = run_one_to_one(subjects, micro_model(), tcfg, Variant::Csdasa, 2);
  REQUIRE(result.runs.size() == 2);
  CHECK(std::fabs(result.runs[0].accuracy - result.runs[1].accuracy) <= 8.0);
}

}  // TEST_SUITE
