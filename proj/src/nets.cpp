#include "mammoseg/nets.hpp"

#include <cmath>
#include <sstream>

namespace mammoseg {
namespace {

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2i(int v) {
  int r = 0;
  while (v > 1) {
    v >>= 1;
    ++r;
  }
  return r;
}

template <typename T>
Tensor<T> normal_tensor(Rng& rng, std::vector<std::int64_t> shape, double mu, double sd) {
  Tensor<T> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = T(rng.normal(mu, sd));
  return t;
}

template <typename T>
Tensor<T> const_tensor(std::vector<std::int64_t> shape, double v) {
  Tensor<T> t(std::move(shape));
  t.fill(T(v));
  return t;
}

}  // namespace

int GeneratorSpec::depth() const { return log2i(image_size); }

std::vector<int> GeneratorSpec::encoder_channels() const {
  std::vector<int> plan;
  for (int i = 0; i < depth(); ++i) plan.push_back(base_filters * std::min(8, 1 << i));
  return plan;
}

void GeneratorSpec::validate() const {
  if (!is_pow2(image_size) || image_size < 16 || image_size > 1024)
    throw ConfigError("generator image_size must be a power of two in [16, 1024]");
  if (in_channels < 1) throw ConfigError("generator in_channels must be >= 1");
  if (base_filters < 1) throw ConfigError("generator base_filters must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw ConfigError("generator dropout_p must be in [0, 1)");
  if (!(init_std > 0.0) || !(bn_eps > 0.0) || !(bn_momentum > 0.0 && bn_momentum <= 1.0))
    throw ConfigError("generator init/batchnorm constants out of range");
}

std::vector<int> DiscriminatorSpec::channel_plan() const {
  return {base_filters, 2 * base_filters, 4 * base_filters, 8 * base_filters, 1};
}

std::vector<int> DiscriminatorSpec::strides() const {
  const int strided = std::min(3, log2i(image_size) - 2);
  std::vector<int> s;
  for (int i = 0; i < 5; ++i) s.push_back(i < strided ? 2 : 1);
  return s;
}

int DiscriminatorSpec::output_extent() const {
  int e = image_size;
  for (int s : strides()) e = (e + 2 - 4) / s + 1;
  return e;
}

void DiscriminatorSpec::validate() const {
  if (!is_pow2(image_size) || image_size < 16 || image_size > 1024)
    throw ConfigError("discriminator image_size must be a power of two in [16, 1024]");
  if (in_channels < 1 || base_filters < 1)
    throw ConfigError("discriminator channel configuration out of range");
  if (output_extent() < 1) throw ConfigError("discriminator output extent is non-positive");
}

std::vector<int> ClassifierSpec::spatial_trace() const {
  // conv(same) keeps the extent for the first two convs; the last is valid.
  std::vector<int> trace{image_size};
  int e = image_size;
  trace.push_back(e);  // conv1, same padding
  e = (e - pool_k) / pool_stride + 1;
  trace.push_back(e);  // pool1
  trace.push_back(e);  // conv2, same padding
  e = (e - pool_k) / pool_stride + 1;
  trace.push_back(e);  // pool2
  e = e - 4 + 1;
  trace.push_back(e);  // conv3, 4x4 valid
  return trace;
}

void ClassifierSpec::validate() const {
  if (conv_filters.size() != 3) throw ConfigError("classifier needs exactly three conv layers");
  for (int f : conv_filters)
    if (f < 1) throw ConfigError("classifier filter counts must be >= 1");
  if (dense_units < 1 || classes < 2) throw ConfigError("classifier head configuration invalid");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0))
    throw ConfigError("classifier dropout_p must be in [0, 1)");
  if (pool_k != pool_stride) throw ConfigError("classifier pools use stride == window");
  int e = image_size;
  for (int stage = 0; stage < 2; ++stage) {
    if (e % pool_stride != 0)
      throw ConfigError("classifier spatial extent " + std::to_string(e) +
                        " is not divisible by the pool stride");
    e = (e - pool_k) / pool_stride + 1;
  }
  if (e < 4)
    throw ConfigError("classifier needs a 4x4 input to the valid 4x4 convolution, got " +
                      std::to_string(e));
}

int analytic_receptive_field(const std::vector<int>& kernels, const std::vector<int>& strides) {
  if (kernels.size() != strides.size())
    throw ContractError("receptive field needs one stride per kernel");
  int r = 1, jump = 1;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    r += (kernels[i] - 1) * jump;
    jump *= strides[i];
  }
  return r;
}

// ---------------------------------------------------------------------------
// Generator

template <typename T>
Generator<T>::Generator(const GeneratorSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  const int d = spec_.depth();
  const std::vector<int> enc_ch = spec_.encoder_channels();

  auto add_conv = [&](const std::string& prefix, int in_c, int out_c, bool bn) {
    Layer layer;
    layer.w = &params_.add(prefix + ".weight",
                           normal_tensor<T>(rng, {out_c, in_c, 4, 4}, 0.0, spec_.init_std));
    layer.b = &params_.add(prefix + ".bias", const_tensor<T>({out_c}, 0.0));
    if (bn) {
      layer.gamma = &params_.add(prefix + ".bn.gamma",
                                 normal_tensor<T>(rng, {out_c}, 1.0, spec_.init_std));
      layer.beta = &params_.add(prefix + ".bn.beta", const_tensor<T>({out_c}, 0.0));
      layer.stats = std::make_unique<BatchNormStats<T>>(out_c);
    }
    return layer;
  };
  auto add_deconv = [&](const std::string& prefix, int in_c, int out_c, bool bn) {
    Layer layer;
    layer.w = &params_.add(prefix + ".weight",
                           normal_tensor<T>(rng, {in_c, out_c, 4, 4}, 0.0, spec_.init_std));
    layer.b = &params_.add(prefix + ".bias", const_tensor<T>({out_c}, 0.0));
    if (bn) {
      layer.gamma = &params_.add(prefix + ".bn.gamma",
                                 normal_tensor<T>(rng, {out_c}, 1.0, spec_.init_std));
      layer.beta = &params_.add(prefix + ".bn.beta", const_tensor<T>({out_c}, 0.0));
      layer.stats = std::make_unique<BatchNormStats<T>>(out_c);
    }
    return layer;
  };

  for (int i = 0; i < d; ++i) {
    const int in_c = i == 0 ? spec_.in_channels : enc_ch[std::size_t(i - 1)];
    const bool bn = i != 0 && i != d - 1;  // none after the first and last encoders
    enc_.push_back(add_conv("gen.enc" + std::to_string(i + 1), in_c, enc_ch[std::size_t(i)], bn));
  }
  for (int j = 0; j < d; ++j) {
    const int out_c = j < d - 1 ? enc_ch[std::size_t(d - 2 - j)] : spec_.in_channels;
    int in_c;
    if (j == 0)
      in_c = enc_ch[std::size_t(d - 1)];
    else if (j < d - 1)
      in_c = enc_ch[std::size_t(d - 2 - (j - 1))] + enc_ch[std::size_t(d - 1 - j)];
    else
      in_c = enc_ch[std::size_t(0)];
    const bool bn = j != d - 1;  // plain tanh head on the last decoder
    dec_.push_back(add_deconv("gen.dec" + std::to_string(j + 1), in_c, out_c, bn));
  }

  // Architecture-fidelity gate for the published configuration.
  if (spec_.image_size == 256 && spec_.base_filters == 32 && spec_.in_channels == 1) {
    const std::int64_t count = parameter_count();
    const double target = 13607043.0;
    if (std::abs(double(count) - target) > 1e-4 * target)
      throw ConfigError("generator parameter count " + std::to_string(count) +
                        " deviates more than 0.01% from 13,607,043\n" + count_table());
  }
}

template <typename T>
Var Generator<T>::forward(Tape<T>& tape, Var x, bool bn_train, Rng& z_rng) {
  const int d = spec_.depth();
  std::vector<Var> enc_out;
  Var h = x;
  for (int i = 0; i < d; ++i) {
    Layer& L = enc_[std::size_t(i)];
    h = conv2d(tape, h, tape.leaf(*L.w), tape.leaf(*L.b), 2, 1);
    if (L.stats)
      h = batchnorm2d(tape, h, tape.leaf(*L.gamma), tape.leaf(*L.beta), bn_train, *L.stats,
                      T(spec_.bn_eps), T(spec_.bn_momentum));
    h = activation(tape, h, i == d - 1 ? Act::relu : Act::leaky_relu);
    enc_out.push_back(h);
  }
  for (int j = 0; j < d; ++j) {
    Layer& L = dec_[std::size_t(j)];
    Var in = h;
    if (j >= 1 && j <= d - 2) in = concat_channels(tape, h, enc_out[std::size_t(d - 1 - j)]);
    h = conv_transpose2d(tape, in, tape.leaf(*L.w), tape.leaf(*L.b), 2, 1);
    if (j < d - 1) {
      h = batchnorm2d(tape, h, tape.leaf(*L.gamma), tape.leaf(*L.beta), bn_train, *L.stats,
                      T(spec_.bn_eps), T(spec_.bn_momentum));
      if (j < 3) h = dropout(tape, h, T(spec_.dropout_p), z_rng, true);
      h = activation(tape, h, Act::relu);
    } else {
      h = activation(tape, h, Act::tanh);
    }
  }
  return h;
}

template <typename T>
std::string Generator<T>::count_table() const {
  std::ostringstream os;
  os << "generator parameters by layer:";
  std::map<std::string, std::int64_t> per_layer;
  for (const auto* p : const_cast<ParameterSet<T>&>(params_).all()) {
    std::string layer = p->name.substr(0, p->name.find('.', 4));
    per_layer[layer] += p->value.numel();
  }
  for (const auto& [layer, n] : per_layer) os << "\n  " << layer << ": " << n;
  os << "\n  total: " << parameter_count();
  return os.str();
}

template <typename T>
std::map<std::string, Tensor<T>*> Generator<T>::state_tensors() {
  std::map<std::string, Tensor<T>*> m;
  for (Parameter<T>* p : params_.all()) m[p->name] = &p->value;
  auto add_stats = [&](const std::string& prefix, std::vector<Layer>& layers) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (!layers[i].stats) continue;
      m[prefix + std::to_string(i + 1) + ".bn.running_mean"] = &layers[i].stats->mean;
      m[prefix + std::to_string(i + 1) + ".bn.running_var"] = &layers[i].stats->var;
    }
  };
  add_stats("gen.enc", enc_);
  add_stats("gen.dec", dec_);
  return m;
}

// ---------------------------------------------------------------------------
// Discriminator

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  const std::vector<int> plan = spec_.channel_plan();
  const std::vector<int> strides = spec_.strides();
  int in_c = spec_.in_channels;
  for (int i = 0; i < 5; ++i) {
    Layer layer;
    const int out_c = plan[std::size_t(i)];
    const std::string prefix = "disc.cn" + std::to_string(i + 1);
    layer.w = &params_.add(prefix + ".weight",
                           normal_tensor<T>(rng, {out_c, in_c, 4, 4}, 0.0, spec_.init_std));
    layer.b = &params_.add(prefix + ".bias", const_tensor<T>({out_c}, 0.0));
    if (i >= 1 && i <= 3) {  // batchnorm after Cn2..Cn4
      layer.gamma = &params_.add(prefix + ".bn.gamma",
                                 normal_tensor<T>(rng, {out_c}, 1.0, spec_.init_std));
      layer.beta = &params_.add(prefix + ".bn.beta", const_tensor<T>({out_c}, 0.0));
      layer.stats = std::make_unique<BatchNormStats<T>>(out_c);
    }
    layer.stride = strides[std::size_t(i)];
    layers_.push_back(std::move(layer));
    in_c = out_c;
  }
}

template <typename T>
Var Discriminator<T>::forward(Tape<T>& tape, Var roi_and_mask, bool bn_train) {
  const Tensor<T>& in = tape.value(roi_and_mask);
  if (in.rank() != 4 || in.size(1) != spec_.in_channels)
    throw ContractError("discriminator expects (N," + std::to_string(spec_.in_channels) +
                        ",H,W) input, got " + in.shape_str());
  Var h = roi_and_mask;
  for (int i = 0; i < 5; ++i) {
    Layer& L = layers_[std::size_t(i)];
    h = conv2d(tape, h, tape.leaf(*L.w), tape.leaf(*L.b), L.stride, 1);
    if (L.stats)
      h = batchnorm2d(tape, h, tape.leaf(*L.gamma), tape.leaf(*L.beta), bn_train, *L.stats,
                      T(spec_.bn_eps), T(spec_.bn_momentum));
    h = activation(tape, h, i == 4 ? Act::sigmoid : Act::leaky_relu);
  }
  return h;
}

template <typename T>
std::map<std::string, Tensor<T>*> Discriminator<T>::state_tensors() {
  std::map<std::string, Tensor<T>*> m;
  for (Parameter<T>* p : params_.all()) m[p->name] = &p->value;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (!layers_[i].stats) continue;
    m["disc.cn" + std::to_string(i + 1) + ".bn.running_mean"] = &layers_[i].stats->mean;
    m["disc.cn" + std::to_string(i + 1) + ".bn.running_var"] = &layers_[i].stats->var;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Classifier

template <typename T>
Classifier<T>::Classifier(const ClassifierSpec& spec, Rng& rng) : spec_(spec) {
  spec_.validate();
  auto he_normal = [&](std::vector<std::int64_t> shape, std::int64_t fan_in) {
    return normal_tensor<T>(rng, std::move(shape), 0.0, std::sqrt(2.0 / double(fan_in)));
  };

  const int kernels[3] = {9, 5, 4};
  int in_c = spec_.in_channels;
  for (int i = 0; i < 3; ++i) {
    const int out_c = spec_.conv_filters[std::size_t(i)];
    const int k = kernels[i];
    conv_w_.push_back(&params_.add("cls.conv" + std::to_string(i + 1) + ".weight",
                                   he_normal({out_c, in_c, k, k}, std::int64_t(in_c) * k * k)));
    in_c = out_c;
  }
  const int flat = spec_.conv_filters[2] * spec_.spatial_trace().back() *
                   spec_.spatial_trace().back();
  fc1_w_ = &params_.add("cls.fc1.weight", he_normal({spec_.dense_units, flat}, flat));
  fc1_b_ = &params_.add("cls.fc1.bias", const_tensor<T>({spec_.dense_units}, 0.0));
  fc2_w_ = &params_.add("cls.fc2.weight",
                        he_normal({spec_.classes, spec_.dense_units}, spec_.dense_units));
  fc2_b_ = &params_.add("cls.fc2.bias", const_tensor<T>({spec_.classes}, 0.0));

  if (spec_.image_size == 64 && spec_.conv_filters == std::vector<int>{64, 128, 256} &&
      spec_.dense_units == 128 && spec_.classes == 4 && spec_.in_channels == 1) {
    if (parameter_count() != 767684)
      throw ConfigError("classifier parameter count " + std::to_string(parameter_count()) +
                        " != 767,684\n" + count_table());
  }
}

template <typename T>
Var Classifier<T>::forward(Tape<T>& tape, Var x, bool train, Rng& rng) {
  const int pads[3] = {4, 2, 0};  // same, same, valid
  Var h = x;
  for (int i = 0; i < 3; ++i) {
    h = conv2d(tape, h, tape.leaf(*conv_w_[std::size_t(i)]), std::nullopt, 1, pads[i]);
    h = activation(tape, h, Act::relu);
    if (i < 2) h = maxpool2d(tape, h, spec_.pool_k, spec_.pool_stride);
  }
  h = flatten2(tape, h);
  h = dense(tape, h, tape.leaf(*fc1_w_), tape.leaf(*fc1_b_));
  h = activation(tape, h, Act::relu);
  h = dropout(tape, h, T(spec_.dropout_p), rng, train);
  h = dense(tape, h, tape.leaf(*fc2_w_), tape.leaf(*fc2_b_));
  return activation(tape, h, Act::softmax_rows);
}

template <typename T>
std::string Classifier<T>::count_table() const {
  std::ostringstream os;
  os << "classifier parameters by layer:";
  std::map<std::string, std::int64_t> per_layer;
  for (const auto* p : const_cast<ParameterSet<T>&>(params_).all()) {
    std::string layer = p->name.substr(0, p->name.find('.', 4));
    per_layer[layer] += p->value.numel();
  }
  for (const auto& [layer, n] : per_layer) os << "\n  " << layer << ": " << n;
  os << "\n  total: " << parameter_count();
  return os.str();
}

template <typename T>
std::map<std::string, Tensor<T>*> Classifier<T>::state_tensors() {
  std::map<std::string, Tensor<T>*> m;
  for (Parameter<T>* p : params_.all()) m[p->name] = &p->value;
  return m;
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template class Classifier<float>;
template class Classifier<double>;

}  // namespace mammoseg
