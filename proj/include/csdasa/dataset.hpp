#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "csdasa/eeg_imaging.hpp"
#include "csdasa/model.hpp"

namespace csdasa {

// Dataset container (bit-exact format):
//   8-byte magic "EEGTNSR1"
//   u64 LE header length
//   UTF-8 JSON header {dims:[N,t,c,w,h], subjects:[{id,start,count}...],
//                      labels_offset}
//   row-major little-endian float32 tensor data
//   one label byte per sample (0..3; 255 = unlabeled)
// Subjects must tile [0,N) contiguously and labeled samples must precede
// unlabeled ones within a subject.
void write_dataset(const std::filesystem::path& path, const std::vector<SubjectDomain>& subjects);
std::vector<SubjectDomain> load_dataset(const std::filesystem::path& path);

// Model checkpoint, same container pattern with named float64 parameter
// blocks: magic "EEGCKPT1", u64 LE header length, JSON header describing the
// model configuration, block table, normalization statistics and run
// metadata, then the concatenated block payload.
struct Checkpoint {
  ModelConfig model;
  CsdasaParams params;
  ChannelStats norm;
  std::optional<Tensor> attention_reference;  // mean source features [c,w,h]
  std::string source_id;
  std::string target_id;  // empty until adaptation
  std::uint64_t seed = 0;
  double val_accuracy = 0.0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace csdasa
