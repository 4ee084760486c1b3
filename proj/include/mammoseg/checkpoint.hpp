#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mammoseg/gan.hpp"
#include "mammoseg/nets.hpp"

namespace mammoseg {

/// MGCK container: magic, version, config hash, epoch, rng state, then named
/// little-endian float32 tensors in a fixed order. Save-load-save is
/// byte-identical.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t config_hash = 0;
  std::uint32_t epoch = 0;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const;
  void add(const std::string& name, const Tensor<float>& t) { tensors.emplace_back(name, t); }
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Full training state: both networks (weights and running stats), both
// optimizers (moments and step counters), epoch and rng position.
Checkpoint capture_gan_state(GanTrainer<float>& trainer, std::uint64_t config_hash);
void restore_gan_state(GanTrainer<float>& trainer, const Checkpoint& ck,
                       std::uint64_t expected_hash, bool allow_hash_mismatch);

Checkpoint capture_classifier_state(Classifier<float>& net, std::uint64_t config_hash);
void restore_classifier_state(Classifier<float>& net, const Checkpoint& ck,
                              std::uint64_t expected_hash, bool allow_hash_mismatch);

}  // namespace mammoseg
