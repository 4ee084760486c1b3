#include "mammoseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace mammoseg {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& bytes;
  const std::string& path;
  std::size_t pos = 0;

  void need(std::size_t n, const std::string& what) {
    if (bytes.size() - pos < n)
      throw ParseError(path + ": truncated " + what, pos);
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(bytes[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(bytes[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
};

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::string out;
  out += "MGCK";
  put_u32(out, Checkpoint::kVersion);
  put_u64(out, ck.config_hash);
  put_u32(out, ck.epoch);
  put_u64(out, ck.rng_seed);
  put_u64(out, ck.rng_counter);
  put_u64(out, std::uint64_t(ck.tensors.size()));
  for (const auto& [name, t] : ck.tensors) {
    put_u32(out, std::uint32_t(name.size()));
    out += name;
    put_u32(out, std::uint32_t(t.rank()));
    for (int d = 0; d < t.rank(); ++d) put_u64(out, std::uint64_t(t.size(d)));
    for (std::int64_t i = 0; i < t.numel(); ++i) put_f32(out, t[i]);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError(path, "cannot open for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError(path, "short write");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path, "cannot open checkpoint");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{bytes, path};

  r.need(4, "magic");
  if (bytes.compare(0, 4, "MGCK") != 0) throw ParseError(path + ": bad checkpoint magic", 0);
  r.pos = 4;
  const std::uint32_t version = r.u32("version");
  if (version != Checkpoint::kVersion)
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version), 4);

  Checkpoint ck;
  ck.config_hash = r.u64("config hash");
  ck.epoch = r.u32("epoch");
  ck.rng_seed = r.u64("rng seed");
  ck.rng_counter = r.u64("rng counter");
  const std::uint64_t count = r.u64("tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32("tensor name length");
    r.need(name_len, "tensor name");
    std::string name = bytes.substr(r.pos, name_len);
    r.pos += name_len;
    const std::uint32_t rank = r.u32("rank of tensor '" + name + "'");
    if (rank < 1 || rank > 4)
      throw ParseError(path + ": tensor '" + name + "' has invalid rank", r.pos);
    std::vector<std::int64_t> shape;
    for (std::uint32_t d = 0; d < rank; ++d)
      shape.push_back(std::int64_t(r.u64("extents of tensor '" + name + "'")));
    Tensor<float> t(shape);
    r.need(4 * std::size_t(t.numel()), "payload for tensor '" + name + "'");
    for (std::int64_t j = 0; j < t.numel(); ++j) {
      std::uint32_t bits = r.u32("payload");
      float v;
      std::memcpy(&v, &bits, 4);
      t[j] = v;
    }
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

namespace {

void check_hash(const Checkpoint& ck, std::uint64_t expected, bool allow_mismatch,
                const char* what) {
  if (ck.config_hash != expected && !allow_mismatch)
    throw ConfigError(std::string(what) +
                      ": checkpoint config hash does not match the active config "
                      "(pass --allow-config-mismatch to override)");
}

void restore_named(std::map<std::string, Tensor<float>*> dest, const Checkpoint& ck,
                   const char* what) {
  for (auto& [name, target] : dest) {
    const Tensor<float>* src = ck.find(name);
    if (!src)
      throw ParseError(std::string(what) + ": checkpoint is missing tensor '" + name + "'", 0);
    if (!src->same_shape(*target))
      throw ParseError(std::string(what) + ": tensor '" + name + "' has shape " +
                           src->shape_str() + ", expected " + target->shape_str(),
                       0);
    *target = *src;
  }
}

}  // namespace

Checkpoint capture_gan_state(GanTrainer<float>& trainer, std::uint64_t config_hash) {
  Checkpoint ck;
  ck.config_hash = config_hash;
  ck.epoch = std::uint32_t(trainer.epochs_done());
  ck.rng_seed = trainer.rng().seed();
  ck.rng_counter = trainer.rng().counter();
  for (auto& [name, t] : trainer.generator().state_tensors()) ck.add(name, *t);
  for (auto& [name, t] : trainer.discriminator().state_tensors()) ck.add(name, *t);
  trainer.gen_optimizer().visit_state(
      [&](const std::string& n, Tensor<float>& t) { ck.add("opt_g." + n, t); });
  trainer.disc_optimizer().visit_state(
      [&](const std::string& n, Tensor<float>& t) { ck.add("opt_d." + n, t); });
  ck.add("opt_g.t", Tensor<float>::scalar(float(trainer.gen_optimizer().step_count())));
  ck.add("opt_d.t", Tensor<float>::scalar(float(trainer.disc_optimizer().step_count())));
  return ck;
}

void restore_gan_state(GanTrainer<float>& trainer, const Checkpoint& ck,
                       std::uint64_t expected_hash, bool allow_hash_mismatch) {
  check_hash(ck, expected_hash, allow_hash_mismatch, "restore_gan_state");
  restore_named(trainer.generator().state_tensors(), ck, "generator");
  restore_named(trainer.discriminator().state_tensors(), ck, "discriminator");
  std::map<std::string, Tensor<float>*> opt_state;
  trainer.gen_optimizer().visit_state(
      [&](const std::string& n, Tensor<float>& t) { opt_state["opt_g." + n] = &t; });
  trainer.disc_optimizer().visit_state(
      [&](const std::string& n, Tensor<float>& t) { opt_state["opt_d." + n] = &t; });
  restore_named(std::move(opt_state), ck, "optimizer");
  const Tensor<float>* tg = ck.find("opt_g.t");
  const Tensor<float>* td = ck.find("opt_d.t");
  if (!tg || !td) throw ParseError("checkpoint is missing optimizer step counters", 0);
  trainer.gen_optimizer().set_step_count(std::int64_t((*tg)[0]));
  trainer.disc_optimizer().set_step_count(std::int64_t((*td)[0]));
  trainer.set_rng(Rng(ck.rng_seed, ck.rng_counter));
  trainer.set_epochs_done(int(ck.epoch));
}

Checkpoint capture_classifier_state(Classifier<float>& net, std::uint64_t config_hash) {
  Checkpoint ck;
  ck.config_hash = config_hash;
  for (auto& [name, t] : net.state_tensors()) ck.add(name, *t);
  return ck;
}

void restore_classifier_state(Classifier<float>& net, const Checkpoint& ck,
                              std::uint64_t expected_hash, bool allow_hash_mismatch) {
  check_hash(ck, expected_hash, allow_hash_mismatch, "restore_classifier_state");
  restore_named(net.state_tensors(), ck, "classifier");
}

}  // namespace mammoseg
