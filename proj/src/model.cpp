#include "csdasa/model.hpp"

#include <cmath>
#include <iostream>

#include "csdasa/attention.hpp"

namespace csdasa {

void ModelConfig::validate() const {
  if (frames < 1 || bands < 1 || width < 1 || height < 1) {
    throw ConfigError("model: image dimensions must be positive");
  }
  if (convlstm_channels.empty() || specific_kernels.empty() || fc_units.empty()) {
    throw ConfigError("model: every stage needs at least one layer");
  }
  for (std::int64_t c : convlstm_channels)
    if (c < 1) throw ConfigError("model: non-positive hidden channel count");
  for (std::int64_t c : specific_kernels)
    if (c < 1) throw ConfigError("model: non-positive kernel count");
  for (std::int64_t c : fc_units)
    if (c < 1) throw ConfigError("model: non-positive fc width");
  if (classifier_conv_kernels < 1 || n_classes < 2) {
    throw ConfigError("model: classifier configuration invalid");
  }
  if (kernel_size < 1 || kernel_size % 2 == 0) {
    throw ConfigError("model: kernel size must be odd");
  }
  if (gamma < 0.0) throw ConfigError("model: gamma must be non-negative");
}

Conv2DParams Conv2DParams::init(std::int64_t c_in, std::int64_t c_out, std::int64_t k, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>((c_in + c_out) * k * k));
  std::vector<double> data(static_cast<std::size_t>(c_out * c_in * k * k));
  for (double& v : data) v = rng.uniform(-limit, limit);
  Conv2DParams p;
  p.kernels = Tensor::from_data({c_out, c_in, k, k}, std::move(data), true);
  p.bias = Tensor::zeros({c_out}, true);
  return p;
}

namespace {

Tensor clone_leaf(const Tensor& t) {
  return Tensor::from_data(t.shape(), {t.data().begin(), t.data().end()}, t.requires_grad());
}

}  // namespace

Conv2DParams Conv2DParams::copy() const { return {clone_leaf(kernels), clone_leaf(bias)}; }

LinearParams LinearParams::init(std::int64_t in, std::int64_t out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> data(static_cast<std::size_t>(in * out));
  for (double& v : data) v = rng.uniform(-limit, limit);
  LinearParams p;
  p.weight = Tensor::from_data({in, out}, std::move(data), true);
  p.bias = Tensor::zeros({out}, true);
  return p;
}

LinearParams LinearParams::copy() const { return {clone_leaf(weight), clone_leaf(bias)}; }

CsdasaParams CsdasaParams::init(const ModelConfig& config, Rng& rng) {
  config.validate();
  CsdasaParams p;
  std::int64_t in_ch = config.bands;
  for (std::int64_t hidden : config.convlstm_channels) {
    p.shared.push_back(ConvLSTMCellParams::init(in_ch, hidden, config.kernel_size, config.width,
                                                config.height, rng));
    in_ch = hidden;
  }
  std::int64_t c = config.merged_channels();
  for (std::int64_t kernels : config.specific_kernels) {
    p.specific_source.push_back(Conv2DParams::init(c, kernels, config.kernel_size, rng));
    c = kernels;
  }
  p.classifier_conv = Conv2DParams::init(config.classifier_input_channels(),
                                         config.classifier_conv_kernels, config.kernel_size, rng);
  std::int64_t flat = config.classifier_conv_kernels * config.width * config.height;
  for (std::int64_t units : config.fc_units) {
    p.classifier_fc.push_back(LinearParams::init(flat, units, rng));
    flat = units;
  }
  p.classifier_fc.push_back(LinearParams::init(flat, config.n_classes, rng));
  return p;
}

void CsdasaParams::create_target_branch() {
  specific_target.clear();
  specific_target.reserve(specific_source.size());
  for (const auto& layer : specific_source) specific_target.push_back(layer.copy());
}

namespace {

void append(std::vector<Tensor>& dst, const std::vector<Tensor>& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

}  // namespace

std::vector<Tensor> CsdasaParams::shared_parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : shared) append(out, layer.parameters());
  return out;
}

std::vector<Tensor> CsdasaParams::specific_source_parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : specific_source) {
    out.push_back(layer.kernels);
    out.push_back(layer.bias);
  }
  return out;
}

std::vector<Tensor> CsdasaParams::specific_target_parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : specific_target) {
    out.push_back(layer.kernels);
    out.push_back(layer.bias);
  }
  return out;
}

std::vector<Tensor> CsdasaParams::classifier_parameters() const {
  std::vector<Tensor> out{classifier_conv.kernels, classifier_conv.bias};
  for (const auto& fc : classifier_fc) {
    out.push_back(fc.weight);
    out.push_back(fc.bias);
  }
  return out;
}

std::vector<Tensor> CsdasaParams::all_parameters() const {
  std::vector<Tensor> out = shared_parameters();
  append(out, specific_source_parameters());
  append(out, specific_target_parameters());
  append(out, classifier_parameters());
  return out;
}

std::vector<Tensor> CsdasaParams::adaptation_parameters() const {
  std::vector<Tensor> out = specific_source_parameters();
  append(out, specific_target_parameters());
  append(out, classifier_parameters());
  return out;
}

std::vector<std::pair<std::string, Tensor>> CsdasaParams::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  const char* cell_names[] = {"w_ix", "w_ih", "w_fx", "w_fh", "w_ox", "w_oh", "w_gx", "w_gh",
                              "w_ic", "w_fc", "w_oc", "b_i",  "b_f",  "b_o",  "b_g"};
  for (std::size_t li = 0; li < shared.size(); ++li) {
    const auto params = shared[li].parameters();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      out.emplace_back("shared." + std::to_string(li) + "." + cell_names[pi], params[pi]);
    }
  }
  auto add_branch = [&out](const char* prefix, const std::vector<Conv2DParams>& branch) {
    for (std::size_t li = 0; li < branch.size(); ++li) {
      out.emplace_back(std::string(prefix) + "." + std::to_string(li) + ".kernels",
                       branch[li].kernels);
      out.emplace_back(std::string(prefix) + "." + std::to_string(li) + ".bias", branch[li].bias);
    }
  };
  add_branch("specific_source", specific_source);
  add_branch("specific_target", specific_target);
  out.emplace_back("classifier.conv.kernels", classifier_conv.kernels);
  out.emplace_back("classifier.conv.bias", classifier_conv.bias);
  for (std::size_t li = 0; li < classifier_fc.size(); ++li) {
    out.emplace_back("classifier.fc" + std::to_string(li) + ".weight", classifier_fc[li].weight);
    out.emplace_back("classifier.fc" + std::to_string(li) + ".bias", classifier_fc[li].bias);
  }
  return out;
}

void CsdasaParams::freeze_shared(bool frozen) {
  for (auto& layer : shared) layer.set_frozen(frozen);
}

CsdasaParams CsdasaParams::copy() const {
  CsdasaParams out;
  for (const auto& layer : shared) {
    ConvLSTMCellParams c;
    c.w_ix = clone_leaf(layer.w_ix);
    c.w_ih = clone_leaf(layer.w_ih);
    c.w_fx = clone_leaf(layer.w_fx);
    c.w_fh = clone_leaf(layer.w_fh);
    c.w_ox = clone_leaf(layer.w_ox);
    c.w_oh = clone_leaf(layer.w_oh);
    c.w_gx = clone_leaf(layer.w_gx);
    c.w_gh = clone_leaf(layer.w_gh);
    c.w_ic = clone_leaf(layer.w_ic);
    c.w_fc = clone_leaf(layer.w_fc);
    c.w_oc = clone_leaf(layer.w_oc);
    c.b_i = clone_leaf(layer.b_i);
    c.b_f = clone_leaf(layer.b_f);
    c.b_o = clone_leaf(layer.b_o);
    c.b_g = clone_leaf(layer.b_g);
    out.shared.push_back(std::move(c));
  }
  for (const auto& layer : specific_source) out.specific_source.push_back(layer.copy());
  for (const auto& layer : specific_target) out.specific_target.push_back(layer.copy());
  out.classifier_conv = classifier_conv.copy();
  for (const auto& fc : classifier_fc) out.classifier_fc.push_back(fc.copy());
  return out;
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

Tensor reshape_temporal_channels(const Tensor& f) {
  if (f.rank() != 5) {
    throw DimensionError("reshape_temporal_channels: expected [n,t,c,w,h], got " +
                         shape_str(f.shape()));
  }
  return reshape(f, {f.dim(0), f.dim(1) * f.dim(2), f.dim(3), f.dim(4)});
}

namespace {

void check_input(const Tensor& x, const ModelConfig& config, const char* what) {
  if (x.rank() != 5 || x.dim(1) != config.frames || x.dim(2) != config.bands ||
      x.dim(3) != config.width || x.dim(4) != config.height) {
    throw DimensionError(std::string(what) + ": batch must be [n," +
                         std::to_string(config.frames) + "," + std::to_string(config.bands) + "," +
                         std::to_string(config.width) + "," + std::to_string(config.height) +
                         "], got " + shape_str(x.shape()));
  }
}

std::vector<Tensor> branch_forward(const Tensor& merged, const std::vector<Conv2DParams>& branch) {
  std::vector<Tensor> activations;
  Tensor cur = merged;
  activations.reserve(branch.size());
  for (const auto& layer : branch) {
    cur = relu(conv2d(cur, layer.kernels, layer.bias));
    activations.push_back(cur);
  }
  return activations;
}

Tensor classifier_forward(const Tensor& f_o, const CsdasaParams& params) {
  Tensor z = relu(conv2d(f_o, params.classifier_conv.kernels, params.classifier_conv.bias));
  Tensor cur = reshape(z, {z.dim(0), z.dim(1) * z.dim(2) * z.dim(3)});
  for (std::size_t i = 0; i < params.classifier_fc.size(); ++i) {
    const auto& fc = params.classifier_fc[i];
    cur = add_bcast0(matmul(cur, fc.weight), fc.bias);
    if (i + 1 < params.classifier_fc.size()) cur = relu(cur);
  }
  return cur;
}

}  // namespace

ForwardArtifacts forward_pair(const Tensor& x_s, const Tensor& x_t, const CsdasaParams& params,
                              const ModelConfig& config) {
  check_input(x_s, config, "forward_pair");
  check_input(x_t, config, "forward_pair");

  Tensor enc_s = stack_forward(x_s, params.shared);
  Tensor enc_t = (x_t.id() == x_s.id()) ? enc_s : stack_forward(x_t, params.shared);

  Tensor merged_s = reshape_temporal_channels(enc_s);
  Tensor merged_t = reshape_temporal_channels(enc_t);

  const auto& target_branch =
      params.has_target_branch() ? params.specific_target : params.specific_source;
  std::vector<Tensor> acts_s = branch_forward(merged_s, params.specific_source);
  std::vector<Tensor> acts_t = branch_forward(merged_t, target_branch);

  ForwardArtifacts artifacts;
  for (std::size_t i = 0; i < acts_s.size(); ++i) {
    artifacts.layer_features.emplace_back(acts_s[i], acts_t[i]);
  }

  Tensor f_s2d = acts_s.back();
  if (config.attention) {
    Tensor fs_flat = flatten_spatial(f_s2d);
    Tensor ft_flat = flatten_spatial(acts_t.back());
    Tensor att = apply_attention(fs_flat, attention_matrix(fs_flat, ft_flat));
    artifacts.attended =
        attended_concat(f_s2d, unflatten_spatial(att, config.width, config.height));
  } else {
    artifacts.attended = f_s2d;
  }
  artifacts.logits = classifier_forward(artifacts.attended, params);
  return artifacts;
}

Tensor forward_eval(const Tensor& x, const CsdasaParams& params, const ModelConfig& config,
                    const std::optional<Tensor>& reference, Branch branch) {
  check_input(x, config, "forward_eval");
  Tensor merged = reshape_temporal_channels(stack_forward(x, params.shared));
  const auto& layers = (branch == Branch::Target && params.has_target_branch())
                           ? params.specific_target
                           : params.specific_source;
  Tensor f2d = branch_forward(merged, layers).back();

  Tensor f_o = f2d;
  if (config.attention) {
    Tensor att;
    if (reference.has_value()) {
      // pair sample i with reference map i (cycling through the stored
      // reference batch); a single [c,w,h] map is tiled across the batch
      const Tensor& ref = *reference;
      const Shape feature_shape{f2d.dim(1), f2d.dim(2), f2d.dim(3)};
      std::int64_t ref_count = 1;
      if (ref.rank() == 4 &&
          Shape{ref.dim(1), ref.dim(2), ref.dim(3)} == feature_shape) {
        ref_count = ref.dim(0);
      } else if (ref.shape() != feature_shape) {
        throw DimensionError("forward_eval: reference shape " + shape_str(ref.shape()) +
                             " does not match features " + shape_str(f2d.shape()));
      }
      const std::int64_t n = x.dim(0);
      const std::int64_t map_elems = shape_numel(feature_shape);
      std::vector<double> tiled(static_cast<std::size_t>(n * map_elems));
      for (std::int64_t b = 0; b < n; ++b) {
        std::copy_n(ref.data().data() + (b % ref_count) * map_elems, map_elems,
                    tiled.data() + b * map_elems);
      }
      Tensor ref_batch = Tensor::from_data({n, f2d.dim(1), f2d.dim(2), f2d.dim(3)},
                                           std::move(tiled));
      Tensor fx_flat = flatten_spatial(f2d);
      att = unflatten_spatial(
          apply_attention(fx_flat, attention_matrix(fx_flat, flatten_spatial(ref_batch))),
          config.width, config.height);
    } else {
      static bool warned = false;
      if (!warned) {
        std::cerr << "forward_eval: no attention reference available, "
                     "falling back to identity attention\n";
        warned = true;
      }
      att = f2d;  // A = I leaves the features unchanged
    }
    f_o = attended_concat(f2d, att);
  }
  return classifier_forward(f_o, params);
}

std::vector<std::pair<Tensor, Tensor>> mmd_feature_pairs(const ForwardArtifacts& artifacts,
                                                         bool all_layers) {
  if (artifacts.layer_features.empty()) {
    throw DataError("mmd_feature_pairs: forward artifacts carry no layer features");
  }
  if (all_layers) return artifacts.layer_features;
  return {artifacts.layer_features.back()};
}

std::uint64_t parameter_checksum(const CsdasaParams& params) {
  std::uint64_t hash = 1469598103934665603ULL;
  auto mix_bytes = [&hash](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      hash ^= p[i];
      hash *= 1099511628211ULL;
    }
  };
  for (const auto& [name, tensor] : params.named_parameters()) {
    mix_bytes(name.data(), name.size());
    const auto d = tensor.data();
    mix_bytes(d.data(), d.size() * sizeof(double));
  }
  return hash;
}

ParameterCensus parameter_census(const CsdasaParams& params) {
  ParameterCensus census;
  auto count = [](const std::vector<Tensor>& ts) {
    std::int64_t n = 0;
    for (const Tensor& t : ts) n += t.numel();
    return n;
  };
  census.group_counts["shared"] = count(params.shared_parameters());
  census.group_counts["specific_source"] = count(params.specific_source_parameters());
  census.group_counts["specific_target"] = count(params.specific_target_parameters());
  census.group_counts["classifier"] = count(params.classifier_parameters());
  for (const auto& [name, n] : census.group_counts) census.total += n;
  for (const Tensor& t : params.all_parameters()) {
    if (t.requires_grad()) census.trainable += t.numel();
  }
  return census;
}

}  // namespace csdasa
