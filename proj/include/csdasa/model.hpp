#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "csdasa/convlstm.hpp"
#include "csdasa/losses.hpp"
#include "csdasa/rng.hpp"
#include "csdasa/tensor.hpp"

namespace csdasa {

// Network hyperparameters. The defaults mirror the reference architecture:
// 32x32 3-band images over 7 frames, a 4-layer ConvLSTM stack with hidden
// channels [8,16,16,16], two subject-specific Conv2D layers with 32 and 8
// kernels, and a conv+FC classifier head over the attended features.
struct ModelConfig {
  std::int64_t frames = 7;
  std::int64_t bands = 3;
  std::int64_t width = 32;
  std::int64_t height = 32;
  std::vector<std::int64_t> convlstm_channels{8, 16, 16, 16};
  std::vector<std::int64_t> specific_kernels{32, 8};
  std::int64_t classifier_conv_kernels = 4;
  std::vector<std::int64_t> fc_units{4096, 512};
  std::int64_t n_classes = 4;
  std::int64_t kernel_size = 3;
  // attention off + MMD on the last layer only = the DDC-style "nonatt"
  // baseline; on + all layers = the full model
  bool attention = true;
  bool mmd_all_layers = true;
  double gamma = 1.0;
  KernelConfig kernel = KernelConfig::median();

  std::int64_t merged_channels() const { return frames * convlstm_channels.back(); }
  std::int64_t classifier_input_channels() const {
    return attention ? 2 * specific_kernels.back() : specific_kernels.back();
  }
  void validate() const;
};

struct Conv2DParams {
  Tensor kernels;  // [c_out,c_in,k,k]
  Tensor bias;     // [c_out]

  static Conv2DParams init(std::int64_t c_in, std::int64_t c_out, std::int64_t k, Rng& rng);
  Conv2DParams copy() const;
};

struct LinearParams {
  Tensor weight;  // [in,out]
  Tensor bias;    // [out]

  static LinearParams init(std::int64_t in, std::int64_t out, Rng& rng);
  LinearParams copy() const;
};

// All parameters of the network, grouped the way training treats them:
// the shared ConvLSTM stack, one subject-specific branch per domain, and the
// classifier head. The target branch exists only after adaptation starts; it
// is cloned from the pretrained source branch.
struct CsdasaParams {
  std::vector<ConvLSTMCellParams> shared;
  std::vector<Conv2DParams> specific_source;
  std::vector<Conv2DParams> specific_target;  // empty until adaptation
  Conv2DParams classifier_conv;
  std::vector<LinearParams> classifier_fc;

  static CsdasaParams init(const ModelConfig& config, Rng& rng);

  bool has_target_branch() const { return !specific_target.empty(); }
  void create_target_branch();

  std::vector<Tensor> shared_parameters() const;
  std::vector<Tensor> specific_source_parameters() const;
  std::vector<Tensor> specific_target_parameters() const;
  std::vector<Tensor> classifier_parameters() const;
  std::vector<Tensor> all_parameters() const;
  // everything except the (frozen) shared stack
  std::vector<Tensor> adaptation_parameters() const;

  std::vector<std::pair<std::string, Tensor>> named_parameters() const;

  void freeze_shared(bool frozen);
  CsdasaParams copy() const;
};

struct ForwardArtifacts {
  Tensor logits;  // [n,classes]
  // per subject-specific layer: (source activations, target activations)
  std::vector<std::pair<Tensor, Tensor>> layer_features;
  Tensor attended;  // classifier input F^o
};

// [n,t,c,w,h] -> [n,t*c,w,h]; t major, c minor; lossless.
Tensor reshape_temporal_channels(const Tensor& f);

// Shared stack on both batches (identical weights), temporal-channel merge,
// per-domain specific branches with every layer's paired activations
// recorded, attention of the source features over the target's, classifier
// on the attended source features. When x_s and x_t are the same tensor the
// encoder runs once. Without a target branch the source branch serves both
// domains (the pretraining mode).
ForwardArtifacts forward_pair(const Tensor& x_s, const Tensor& x_t, const CsdasaParams& params,
                              const ModelConfig& config);

enum class Branch { Source, Target };

// Single-domain inference. The classifier was trained on attended features,
// which need a counterpart domain; `reference` is a fixed mean source feature
// map [c,w,h] recorded during training and the attention is mirrored against
// it. Without a reference the attention falls back to the identity (F^o =
// [F, F]) and a warning is emitted.
Tensor forward_eval(const Tensor& x, const CsdasaParams& params, const ModelConfig& config,
                    const std::optional<Tensor>& reference, Branch branch);

// Selects Eq.-style MMD inputs from the artifacts: all subject-specific
// layers, or only the deepest one.
std::vector<std::pair<Tensor, Tensor>> mmd_feature_pairs(const ForwardArtifacts& artifacts,
                                                         bool all_layers);

struct ParameterCensus {
  std::map<std::string, std::int64_t> group_counts;
  std::int64_t total = 0;
  std::int64_t trainable = 0;
};

ParameterCensus parameter_census(const CsdasaParams& params);

// FNV-1a over the raw bytes of every parameter, in named_parameters order.
// Bit-identical parameters give identical checksums.
std::uint64_t parameter_checksum(const CsdasaParams& params);

}  // namespace csdasa
