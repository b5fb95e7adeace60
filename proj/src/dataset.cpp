#include "csdasa/dataset.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace csdasa {

// File layout assumes a little-endian host (the float payloads are written
// raw); the length prefix is encoded explicitly.

namespace {

using nlohmann::json;

constexpr char kDatasetMagic[8] = {'E', 'E', 'G', 'T', 'N', 'S', 'R', '1'};
constexpr char kCheckpointMagic[8] = {'E', 'E', 'G', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint8_t kUnlabeled = 255;

void write_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::ifstream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

json read_header(std::ifstream& in, const char (&magic)[8], const std::string& path,
                 const char* kind) {
  char got[8];
  in.read(got, 8);
  if (!in || std::memcmp(got, magic, 8) != 0) {
    throw DataError(std::string(kind) + " " + path + ": magic/version mismatch at offset 0");
  }
  const std::uint64_t header_len = read_u64(in);
  if (!in) throw DataError(std::string(kind) + " " + path + ": truncated header length at offset 8");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw DataError(std::string(kind) + " " + path + ": truncated header at offset 16");
  json j = json::parse(header, nullptr, false);
  if (j.is_discarded()) {
    throw DataError(std::string(kind) + " " + path + ": header is not valid JSON at offset 16");
  }
  return j;
}

json kernel_to_json(const KernelConfig& k) {
  return {{"policy", k.policy == KernelConfig::Policy::Median ? "median" : "fixed"},
          {"sigma", k.sigma}};
}

KernelConfig kernel_from_json(const json& j) {
  const std::string policy = j.at("policy").get<std::string>();
  if (policy == "median") return KernelConfig::median();
  return KernelConfig::fixed(j.at("sigma").get<double>());
}

json model_to_json(const ModelConfig& m) {
  return {{"frames", m.frames},
          {"bands", m.bands},
          {"width", m.width},
          {"height", m.height},
          {"convlstm_channels", m.convlstm_channels},
          {"specific_kernels", m.specific_kernels},
          {"classifier_conv_kernels", m.classifier_conv_kernels},
          {"fc_units", m.fc_units},
          {"n_classes", m.n_classes},
          {"kernel_size", m.kernel_size},
          {"attention", m.attention},
          {"mmd_all_layers", m.mmd_all_layers},
          {"gamma", m.gamma},
          {"kernel", kernel_to_json(m.kernel)}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.frames = j.at("frames").get<std::int64_t>();
  m.bands = j.at("bands").get<std::int64_t>();
  m.width = j.at("width").get<std::int64_t>();
  m.height = j.at("height").get<std::int64_t>();
  m.convlstm_channels = j.at("convlstm_channels").get<std::vector<std::int64_t>>();
  m.specific_kernels = j.at("specific_kernels").get<std::vector<std::int64_t>>();
  m.classifier_conv_kernels = j.at("classifier_conv_kernels").get<std::int64_t>();
  m.fc_units = j.at("fc_units").get<std::vector<std::int64_t>>();
  m.n_classes = j.at("n_classes").get<std::int64_t>();
  m.kernel_size = j.at("kernel_size").get<std::int64_t>();
  m.attention = j.at("attention").get<bool>();
  m.mmd_all_layers = j.at("mmd_all_layers").get<bool>();
  m.gamma = j.at("gamma").get<double>();
  m.kernel = kernel_from_json(j.at("kernel"));
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// dataset container
// ---------------------------------------------------------------------------

void write_dataset(const std::filesystem::path& path, const std::vector<SubjectDomain>& subjects) {
  if (subjects.empty()) throw DataError("write_dataset: no subjects");
  Shape sample_shape;
  std::int64_t total = 0;
  for (const auto& subject : subjects) {
    if (subject.samples.empty()) {
      throw DataError("write_dataset: subject " + subject.subject_id + " is empty");
    }
    subject.check_label_order();
    for (const auto& sample : subject.samples) {
      if (sample_shape.empty()) {
        sample_shape = sample.frames.shape();
        if (sample_shape.size() != 4) {
          throw DataError("write_dataset: samples must be [t,c,w,h]");
        }
      } else if (sample.frames.shape() != sample_shape) {
        throw DataError("write_dataset: inconsistent sample shapes in subject " +
                        subject.subject_id);
      }
      if (sample.has_label && (sample.label < 0 || sample.label > 3)) {
        throw DataError("write_dataset: label out of range in subject " + subject.subject_id);
      }
    }
    total += static_cast<std::int64_t>(subject.samples.size());
  }

  json subjects_json = json::array();
  std::int64_t start = 0;
  for (const auto& subject : subjects) {
    subjects_json.push_back({{"id", subject.subject_id},
                             {"start", start},
                             {"count", subject.samples.size()}});
    start += static_cast<std::int64_t>(subject.samples.size());
  }

  const std::int64_t sample_elems = shape_numel(sample_shape);
  const std::uint64_t data_bytes = static_cast<std::uint64_t>(total * sample_elems) * 4;

  json header{{"dims",
               {total, sample_shape[0], sample_shape[1], sample_shape[2], sample_shape[3]}},
              {"subjects", subjects_json},
              {"labels_offset", 0}};
  // labels_offset participates in the header length; iterate to fixpoint
  std::string header_str;
  for (int i = 0; i < 4; ++i) {
    header_str = header.dump();
    const std::uint64_t offset = 16 + header_str.size() + data_bytes;
    if (header["labels_offset"].get<std::uint64_t>() == offset) break;
    header["labels_offset"] = offset;
  }
  header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("write_dataset: cannot open " + path.string());
  out.write(kDatasetMagic, 8);
  write_u64(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

  std::vector<float> buffer(static_cast<std::size_t>(sample_elems));
  std::vector<std::uint8_t> labels;
  labels.reserve(static_cast<std::size_t>(total));
  for (const auto& subject : subjects) {
    for (const auto& sample : subject.samples) {
      const auto d = sample.frames.data();
      for (std::int64_t i = 0; i < sample_elems; ++i) buffer[static_cast<std::size_t>(i)] = static_cast<float>(d[i]);
      out.write(reinterpret_cast<const char*>(buffer.data()),
                static_cast<std::streamsize>(buffer.size() * sizeof(float)));
      labels.push_back(sample.has_label ? static_cast<std::uint8_t>(sample.label) : kUnlabeled);
    }
  }
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size()));
  if (!out) throw DataError("write_dataset: write failed for " + path.string());
}

std::vector<SubjectDomain> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_dataset: cannot open " + path.string());
  const json header = read_header(in, kDatasetMagic, path.string(), "dataset");

  const auto dims = header.at("dims").get<std::vector<std::int64_t>>();
  if (dims.size() != 5) {
    throw DataError("dataset " + path.string() + ": dims must be [N,t,c,w,h]");
  }
  const std::int64_t total = dims[0];
  for (std::int64_t d : dims) {
    if (d < 1) throw DataError("dataset " + path.string() + ": non-positive dimension");
  }
  const Shape sample_shape{dims[1], dims[2], dims[3], dims[4]};
  const std::int64_t sample_elems = shape_numel(sample_shape);

  struct SubjectSpan {
    std::string id;
    std::int64_t start, count;
  };
  std::vector<SubjectSpan> spans;
  for (const auto& s : header.at("subjects")) {
    spans.push_back({s.at("id").get<std::string>(), s.at("start").get<std::int64_t>(),
                     s.at("count").get<std::int64_t>()});
  }
  if (spans.empty()) throw DataError("dataset " + path.string() + ": no subjects");
  std::int64_t expect_start = 0;
  for (const auto& span : spans) {
    if (span.count < 1) {
      throw DataError("dataset " + path.string() + ": subject " + span.id + " is empty");
    }
    if (span.start != expect_start) {
      throw DataError("dataset " + path.string() + ": subject " + span.id +
                      " does not start at sample " + std::to_string(expect_start));
    }
    expect_start += span.count;
  }
  if (expect_start != total) {
    throw DataError("dataset " + path.string() + ": subjects cover " +
                    std::to_string(expect_start) + " of " + std::to_string(total) + " samples");
  }

  const std::uint64_t data_offset = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t data_bytes = static_cast<std::uint64_t>(total * sample_elems) * 4;
  const std::uint64_t labels_offset = header.at("labels_offset").get<std::uint64_t>();
  if (labels_offset != data_offset + data_bytes) {
    throw DataError("dataset " + path.string() + ": labels_offset " +
                    std::to_string(labels_offset) + " does not match the tensor section end " +
                    std::to_string(data_offset + data_bytes));
  }

  std::vector<std::uint8_t> labels(static_cast<std::size_t>(total));
  {
    std::ifstream lab(path, std::ios::binary);
    lab.seekg(static_cast<std::streamoff>(labels_offset));
    lab.read(reinterpret_cast<char*>(labels.data()), total);
    if (!lab) {
      throw DataError("dataset " + path.string() + ": truncated label section at offset " +
                      std::to_string(labels_offset));
    }
  }

  std::vector<SubjectDomain> subjects;
  subjects.reserve(spans.size());
  std::vector<float> buffer(static_cast<std::size_t>(sample_elems));
  for (const auto& span : spans) {
    SubjectDomain domain;
    domain.subject_id = span.id;
    domain.samples.reserve(static_cast<std::size_t>(span.count));
    for (std::int64_t s = 0; s < span.count; ++s) {
      const std::int64_t index = span.start + s;
      in.read(reinterpret_cast<char*>(buffer.data()),
              static_cast<std::streamsize>(buffer.size() * sizeof(float)));
      if (!in) {
        throw DataError("dataset " + path.string() + ": truncated tensor data at offset " +
                        std::to_string(data_offset + static_cast<std::uint64_t>(index) *
                                                         sample_elems * 4));
      }
      MultiFrameEEGImage img;
      std::vector<double> values(buffer.begin(), buffer.end());
      img.frames = Tensor::from_data(sample_shape, std::move(values));
      const std::uint8_t label = labels[static_cast<std::size_t>(index)];
      if (label == kUnlabeled) {
        img.label = -1;
        img.has_label = false;
      } else if (label <= 3) {
        img.label = label;
        img.has_label = true;
      } else {
        throw DataError("dataset " + path.string() + ": label " + std::to_string(label) +
                        " out of range at offset " + std::to_string(labels_offset + index));
      }
      domain.samples.push_back(std::move(img));
    }
    domain.check_label_order();
    subjects.push_back(std::move(domain));
  }
  return subjects;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  auto blocks = checkpoint.params.named_parameters();
  if (checkpoint.attention_reference.has_value()) {
    blocks.emplace_back("attention_reference", *checkpoint.attention_reference);
  }

  json block_table = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : blocks) {
    block_table.push_back({{"name", name},
                           {"dims", tensor.shape()},
                           {"dtype", "f64"},
                           {"offset", offset}});
    offset += static_cast<std::uint64_t>(tensor.numel()) * 8;
  }

  json header{{"kind", "checkpoint"},
              {"model", model_to_json(checkpoint.model)},
              {"blocks", block_table},
              {"norm",
               {{"mean", checkpoint.norm.mean},
                {"stddev", checkpoint.norm.stddev},
                {"centered_only", checkpoint.norm.centered_only}}},
              {"meta",
               {{"source_id", checkpoint.source_id},
                {"target_id", checkpoint.target_id},
                {"seed", checkpoint.seed},
                {"val_accuracy", checkpoint.val_accuracy}}}};
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("save_checkpoint: cannot open " + path.string());
  out.write(kCheckpointMagic, 8);
  write_u64(out, header_str.size());
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& [name, tensor] : blocks) {
    const auto d = tensor.data();
    out.write(reinterpret_cast<const char*>(d.data()),
              static_cast<std::streamsize>(d.size() * sizeof(double)));
  }
  if (!out) throw DataError("save_checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open " + path.string());
  const json header = read_header(in, kCheckpointMagic, path.string(), "checkpoint");

  Checkpoint ckpt;
  ckpt.model = model_from_json(header.at("model"));
  const auto& norm = header.at("norm");
  ckpt.norm.mean = norm.at("mean").get<std::vector<double>>();
  ckpt.norm.stddev = norm.at("stddev").get<std::vector<double>>();
  ckpt.norm.centered_only = norm.at("centered_only").get<std::vector<bool>>();
  const auto& meta = header.at("meta");
  ckpt.source_id = meta.at("source_id").get<std::string>();
  ckpt.target_id = meta.at("target_id").get<std::string>();
  ckpt.seed = meta.at("seed").get<std::uint64_t>();
  ckpt.val_accuracy = meta.at("val_accuracy").get<double>();

  // rebuild the parameter skeleton, then overwrite block data by name
  Rng init_rng(0);
  ckpt.params = CsdasaParams::init(ckpt.model, init_rng);

  bool has_target = false;
  for (const auto& block : header.at("blocks")) {
    if (block.at("name").get<std::string>().rfind("specific_target.", 0) == 0) has_target = true;
  }
  if (has_target) ckpt.params.create_target_branch();

  std::map<std::string, Tensor> by_name;
  for (auto& [name, tensor] : ckpt.params.named_parameters()) by_name.emplace(name, tensor);

  const std::uint64_t payload_start = static_cast<std::uint64_t>(in.tellg());
  for (const auto& block : header.at("blocks")) {
    const std::string name = block.at("name").get<std::string>();
    const auto dims = block.at("dims").get<Shape>();
    const std::uint64_t offset = block.at("offset").get<std::uint64_t>();
    const std::int64_t numel = shape_numel(dims);
    std::vector<double> data(static_cast<std::size_t>(numel));
    in.seekg(static_cast<std::streamoff>(payload_start + offset));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!in) {
      throw DataError("checkpoint " + path.string() + ": truncated block " + name +
                      " at offset " + std::to_string(payload_start + offset));
    }
    if (name == "attention_reference") {
      ckpt.attention_reference = Tensor::from_data(dims, std::move(data));
      continue;
    }
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw DataError("checkpoint " + path.string() + ": unknown block " + name);
    }
    if (it->second.shape() != dims) {
      throw DataError("checkpoint " + path.string() + ": block " + name + " has shape " +
                      shape_str(dims) + ", expected " + shape_str(it->second.shape()));
    }
    auto dst = it->second.mutable_data();
    std::copy(data.begin(), data.end(), dst.begin());
  }
  return ckpt;
}

}  // namespace csdasa
