#include "mammoseg/config.hpp"

#include <fstream>

namespace mammoseg {
namespace {

using nlohmann::json;

// Every key present in `doc` must exist in the reference document with a
// compatible type; extra keys are configuration errors.
void reject_unknown_keys(const json& doc, const json& reference, const std::string& where) {
  if (!doc.is_object()) throw ConfigError("config node " + where + " must be an object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!reference.contains(it.key()))
      throw ConfigError("unknown config key: " + where + it.key());
    const json& ref = reference.at(it.key());
    const json& val = it.value();
    if (ref.is_object()) {
      reject_unknown_keys(val, ref, where + it.key() + ".");
    } else if (ref.is_string() != val.is_string() || ref.is_array() != val.is_array() ||
               (ref.is_number() && !val.is_number() && !val.is_boolean()) ||
               (val.is_object() && !ref.is_object())) {
      throw ConfigError("config key " + where + it.key() + " has the wrong type");
    }
  }
}

template <typename T>
void get_if(const json& doc, const char* key, T& out) {
  if (doc.contains(key)) out = doc.at(key).get<T>();
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& doc) {
  RunConfig cfg;  // defaults
  reject_unknown_keys(doc, cfg.to_json(), "");

  get_if(doc, "seed", cfg.seed);
  if (doc.contains("preprocess")) {
    const json& p = doc.at("preprocess");
    get_if(p, "gaussian_sigma", cfg.preprocess.gaussian_sigma);
    get_if(p, "equalize_bins", cfg.preprocess.equalize_bins);
  }
  if (doc.contains("generator")) {
    const json& g = doc.at("generator");
    get_if(g, "image_size", cfg.generator.image_size);
    get_if(g, "base_filters", cfg.generator.base_filters);
    get_if(g, "dropout_p", cfg.generator.dropout_p);
    get_if(g, "init_std", cfg.generator.init_std);
  }
  if (doc.contains("discriminator"))
    get_if(doc.at("discriminator"), "base_filters", cfg.discriminator.base_filters);
  if (doc.contains("batchnorm")) {
    const json& b = doc.at("batchnorm");
    get_if(b, "eps", cfg.batchnorm.eps);
    get_if(b, "momentum", cfg.batchnorm.momentum);
  }
  if (doc.contains("gan")) {
    const json& g = doc.at("gan");
    get_if(g, "lambda_dice", cfg.gan.lambda_dice);
    get_if(g, "reconstruction_loss", cfg.gan.reconstruction_loss);
    get_if(g, "learning_rate", cfg.gan.learning_rate);
    get_if(g, "beta1", cfg.gan.beta1);
    get_if(g, "beta2", cfg.gan.beta2);
    get_if(g, "batch_size", cfg.gan.batch_size);
    get_if(g, "epochs", cfg.gan.epochs);
    get_if(g, "log_eps", cfg.gan.log_eps);
    get_if(g, "dice_eps", cfg.gan.dice_eps);
    get_if(g, "optimizer_eps", cfg.gan.optimizer_eps);
    get_if(g, "threshold", cfg.gan.threshold);
  }
  if (doc.contains("classifier")) {
    const json& c = doc.at("classifier");
    get_if(c, "image_size", cfg.classifier.image_size);
    get_if(c, "learning_rate", cfg.classifier.learning_rate);
    get_if(c, "momentum", cfg.classifier.momentum);
    get_if(c, "squared_avg_decay", cfg.classifier.squared_avg_decay);
    get_if(c, "batch_size", cfg.classifier.batch_size);
    get_if(c, "epochs", cfg.classifier.epochs);
    get_if(c, "folds", cfg.classifier.folds);
    get_if(c, "dropout_p", cfg.classifier.dropout_p);
    get_if(c, "loss_eps", cfg.classifier.loss_eps);
    get_if(c, "optimizer_eps", cfg.classifier.optimizer_eps);
  }
  if (doc.contains("phantom")) {
    const json& p = doc.at("phantom");
    get_if(p, "image_size", cfg.phantom.image_size);
    get_if(p, "contrast", cfg.phantom.contrast);
    get_if(p, "noise_sigma", cfg.phantom.noise_sigma);
    get_if(p, "class_counts", cfg.phantom.class_counts);
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path, "cannot open config");
  json doc;
  try {
    f >> doc;
  } catch (const json::parse_error& e) {
    throw ParseError("config is not valid JSON: " + std::string(e.what()),
                     std::size_t(e.byte));
  }
  return from_json(doc);
}

nlohmann::json RunConfig::to_json() const {
  json doc;
  doc["seed"] = seed;
  doc["preprocess"] = {{"gaussian_sigma", preprocess.gaussian_sigma},
                       {"equalize_bins", preprocess.equalize_bins}};
  doc["generator"] = {{"image_size", generator.image_size},
                      {"base_filters", generator.base_filters},
                      {"dropout_p", generator.dropout_p},
                      {"init_std", generator.init_std}};
  doc["discriminator"] = {{"base_filters", discriminator.base_filters}};
  doc["batchnorm"] = {{"eps", batchnorm.eps}, {"momentum", batchnorm.momentum}};
  doc["gan"] = {{"lambda_dice", gan.lambda_dice},
                {"reconstruction_loss", gan.reconstruction_loss},
                {"learning_rate", gan.learning_rate},
                {"beta1", gan.beta1},
                {"beta2", gan.beta2},
                {"batch_size", gan.batch_size},
                {"epochs", gan.epochs},
                {"log_eps", gan.log_eps},
                {"dice_eps", gan.dice_eps},
                {"optimizer_eps", gan.optimizer_eps},
                {"threshold", gan.threshold}};
  doc["classifier"] = {{"image_size", classifier.image_size},
                       {"learning_rate", classifier.learning_rate},
                       {"momentum", classifier.momentum},
                       {"squared_avg_decay", classifier.squared_avg_decay},
                       {"batch_size", classifier.batch_size},
                       {"epochs", classifier.epochs},
                       {"folds", classifier.folds},
                       {"dropout_p", classifier.dropout_p},
                       {"loss_eps", classifier.loss_eps},
                       {"optimizer_eps", classifier.optimizer_eps}};
  doc["phantom"] = {{"image_size", phantom.image_size},
                    {"contrast", phantom.contrast},
                    {"noise_sigma", phantom.noise_sigma},
                    {"class_counts", phantom.class_counts}};
  return doc;
}

std::string RunConfig::resolved_text() const { return to_json().dump(2) + "\n"; }

std::uint64_t RunConfig::hash() const {
  const std::string text = to_json().dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

void RunConfig::validate() const {
  if (!(preprocess.gaussian_sigma > 0)) throw ConfigError("preprocess.gaussian_sigma must be > 0");
  if (preprocess.equalize_bins < 2) throw ConfigError("preprocess.equalize_bins must be >= 2");
  if (gan.reconstruction_loss != "dice" && gan.reconstruction_loss != "l1")
    throw ConfigError("gan.reconstruction_loss must be 'dice' or 'l1'");
  generator_spec().validate();
  discriminator_spec().validate();
  classifier_spec().validate();
  gan_config().validate();
  shape_config().validate();
  phantom_spec().validate();
}

GeneratorSpec RunConfig::generator_spec() const {
  GeneratorSpec s;
  s.image_size = generator.image_size;
  s.base_filters = generator.base_filters;
  s.dropout_p = generator.dropout_p;
  s.init_std = generator.init_std;
  s.bn_eps = batchnorm.eps;
  s.bn_momentum = batchnorm.momentum;
  return s;
}

DiscriminatorSpec RunConfig::discriminator_spec() const {
  DiscriminatorSpec s;
  s.image_size = generator.image_size;
  s.base_filters = discriminator.base_filters;
  s.init_std = generator.init_std;
  s.bn_eps = batchnorm.eps;
  s.bn_momentum = batchnorm.momentum;
  return s;
}

ClassifierSpec RunConfig::classifier_spec() const {
  ClassifierSpec s;
  s.image_size = classifier.image_size;
  s.dropout_p = classifier.dropout_p;
  return s;
}

GanTrainConfig RunConfig::gan_config() const {
  GanTrainConfig c;
  c.lambda_dice = gan.lambda_dice;
  c.reconstruction = gan.reconstruction_loss == "l1" ? ReconLoss::l1 : ReconLoss::dice;
  c.learning_rate = gan.learning_rate;
  c.beta1 = gan.beta1;
  c.beta2 = gan.beta2;
  c.optim_eps = gan.optimizer_eps;
  c.batch_size = gan.batch_size;
  c.epochs = gan.epochs;
  c.log_eps = gan.log_eps;
  c.dice_eps = gan.dice_eps;
  c.threshold = gan.threshold;
  c.seed = seed;
  return c;
}

ShapeTrainConfig RunConfig::shape_config() const {
  ShapeTrainConfig c;
  c.learning_rate = classifier.learning_rate;
  c.rms_decay = classifier.squared_avg_decay;
  c.momentum = classifier.momentum;
  c.optim_eps = classifier.optimizer_eps;
  c.batch_size = classifier.batch_size;
  c.epochs = classifier.epochs;
  c.folds = classifier.folds;
  c.loss_eps = classifier.loss_eps;
  c.seed = seed;
  return c;
}

PhantomSpec RunConfig::phantom_spec() const {
  PhantomSpec s;
  s.image_size = phantom.image_size;
  s.contrast = phantom.contrast;
  s.noise_sigma = phantom.noise_sigma;
  s.class_counts = phantom.class_counts;
  s.seed = seed;
  return s;
}

GrayImage RunConfig::prepare_roi(const GrayImage& img) const {
  GrayImage out = gaussian_smooth(img, preprocess.gaussian_sigma);
  out = equalize_histogram(out, preprocess.equalize_bins);
  return resize_bilinear(out, generator.image_size, generator.image_size);
}

}  // namespace mammoseg
