#include "cdssl/model.hpp"

#include <algorithm>

#include "cdssl/errors.hpp"
#include "cdssl/hash.hpp"

namespace cdssl {

namespace {

constexpr const char* kMomentumPrefix = "optim.momentum/";

std::string block_name(std::size_t i) { return "encoder." + std::to_string(i); }

void build_small_cnn(const EncoderConfig& c, Sequential& trunk) {
  std::vector<std::size_t> widths = c.channels;
  widths.push_back(c.feature_dim);
  std::size_t in = 3;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    auto block = std::make_unique<Sequential>();
    const std::string name = block_name(i);
    block->add(make_conv2d(name + ".conv", in, widths[i], 3, 1, 1, !c.batch_norm));
    if (c.batch_norm) block->add(make_batch_norm(name + ".bn", widths[i]));
    block->add(make_relu());
    if (i + 1 < widths.size()) block->add(make_max_pool(2, 2, 0));
    trunk.add(std::move(block));
    in = widths[i];
  }
}

void build_residual(const EncoderConfig& c, Sequential& trunk) {
  auto stem = std::make_unique<Sequential>();
  stem->add(make_conv2d("encoder.0.conv", 3, c.base_width, 7, 2, 3, false));
  stem->add(make_batch_norm("encoder.0.bn", c.base_width));
  stem->add(make_relu());
  stem->add(make_max_pool(3, 2, 1));
  trunk.add(std::move(stem));

  std::size_t in = c.base_width;
  std::size_t block = 1;
  for (std::size_t s = 0; s < c.stage_blocks.size(); ++s) {
    const std::size_t width = c.base_width << s;
    const std::size_t out = width * 4;
    for (std::size_t b = 0; b < c.stage_blocks[s]; ++b) {
      const std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
      trunk.add(make_bottleneck(block_name(block++), in, width, out, stride));
      in = out;
    }
  }
}

std::size_t head_input(std::size_t declared, std::size_t feature_dim, const char* what) {
  if (declared != 0 && declared != feature_dim) {
    throw ValidationError(std::string(what) + " expects input dim " + std::to_string(declared) +
                          " but the encoder produces " + std::to_string(feature_dim));
  }
  return feature_dim;
}

void check_batch(const ModelBundle& model, const Tensor& batch) {
  const auto s = model.encoder_config().input_size;
  if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != s || batch.dim(3) != s) {
    throw ValidationError("model expects a batch of shape (N,3," + std::to_string(s) + "," + std::to_string(s) +
                          "), got " + shape_to_string(batch.shape()));
  }
  if (batch.dim(0) == 0) throw ValidationError("empty batch");
}

Tensor run(const ModelBundle& model, const Tensor& batch, ForwardMode mode, ForwardTape* tape,
           ParameterSet* running) {
  check_batch(model, batch);
  ForwardTape local;
  ForwardTape& t = tape ? *tape : local;
  t.mode = mode;
  const Network& net = model.network();
  const ParameterSet& p = model.parameters();
  t.feature_map = net.trunk().forward(p, batch, t.trunk, mode, running);
  t.features = net.pool().forward(p, t.feature_map, t.pool, mode, running);
  return net.head().forward(p, t.features, t.head, mode, running);
}

std::vector<float> to_float(const Tensor& t) {
  std::vector<float> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(t[i]);
  return out;
}

Tensor from_array(const CheckpointArray& a) {
  Tensor t(a.shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(a.values[i]);
  return t;
}

void copy_into(ParameterSet& params, const Checkpoint& ckpt, const std::function<bool(const std::string&)>& keep) {
  for (auto& entry : params) {
    if (!keep(entry.name)) continue;
    const CheckpointArray* a = ckpt.find(entry.name);
    if (!a) throw FormatError("checkpoint is missing array " + entry.name);
    if (a->shape != entry.value.shape()) {
      throw FingerprintError("checkpoint array " + entry.name + " has shape " + shape_to_string(a->shape) +
                             ", model expects " + shape_to_string(entry.value.shape()));
    }
    entry.value = from_array(*a);
    if (!entry.value.all_finite()) throw NumericError("checkpoint array " + entry.name + " is not finite");
  }
}

}  // namespace

std::string to_string(Architecture arch) {
  return arch == Architecture::small_cnn ? "small_cnn" : "reference_resnet50_style";
}

Architecture architecture_from_string(const std::string& name) {
  if (name == "small_cnn") return Architecture::small_cnn;
  if (name == "reference_resnet50_style" || name == "resnet50") return Architecture::reference_resnet50_style;
  throw ValidationError("unknown encoder architecture '" + name + "'");
}

EncoderConfig EncoderConfig::reference() {
  EncoderConfig c;
  c.architecture = Architecture::reference_resnet50_style;
  c.feature_dim = 2048;
  c.input_size = 224;
  c.batch_norm = true;
  return c;
}

void EncoderConfig::validate() const {
  if (feature_dim == 0) throw ValidationError("encoder feature_dim must be positive");
  if (input_size == 0) throw ValidationError("encoder input_size must be positive");
  if (architecture == Architecture::small_cnn) {
    if (channels.size() != 3) throw ValidationError("small_cnn needs three block widths before the feature block");
    if (std::find(channels.begin(), channels.end(), 0u) != channels.end())
      throw ValidationError("small_cnn block widths must be positive");
    if (input_size < 8) throw ValidationError("small_cnn needs inputs of at least 8x8");
  } else {
    if (stage_blocks.empty() || base_width == 0) throw ValidationError("residual encoder needs stages and a base width");
    const std::size_t produced = (base_width << (stage_blocks.size() - 1)) * 4;
    if (produced != feature_dim) {
      throw ValidationError("residual encoder produces " + std::to_string(produced) + " features, config says " +
                            std::to_string(feature_dim));
    }
  }
}

nlohmann::json to_json(const EncoderConfig& c) {
  nlohmann::json j{{"architecture", to_string(c.architecture)},
                   {"feature_dim", c.feature_dim},
                   {"input_size", c.input_size}};
  if (c.architecture == Architecture::small_cnn) {
    j["channels"] = c.channels;
    j["batch_norm"] = c.batch_norm;
  } else {
    j["stage_blocks"] = c.stage_blocks;
    j["base_width"] = c.base_width;
  }
  return j;
}

EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.architecture = architecture_from_string(j.at("architecture").get<std::string>());
  if (c.architecture == Architecture::reference_resnet50_style) c = EncoderConfig::reference();
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.input_size = j.value("input_size", c.input_size);
  c.channels = j.value("channels", c.channels);
  c.batch_norm = j.value("batch_norm", c.batch_norm);
  c.stage_blocks = j.value("stage_blocks", c.stage_blocks);
  c.base_width = j.value("base_width", c.base_width);
  return c;
}

nlohmann::json to_json(const ProjectionHeadConfig& c) {
  return {{"input_dim", c.input_dim}, {"layer_dims", c.layer_dims}};
}

ProjectionHeadConfig projection_config_from_json(const nlohmann::json& j) {
  ProjectionHeadConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.layer_dims = j.value("layer_dims", c.layer_dims);
  return c;
}

nlohmann::json to_json(const ClassifierHeadConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden_dim", c.hidden_dim}, {"num_classes", c.num_classes}};
}

ClassifierHeadConfig classifier_config_from_json(const nlohmann::json& j) {
  ClassifierHeadConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.num_classes = j.value("num_classes", c.num_classes);
  return c;
}

Network::Network(const EncoderConfig& encoder, HeadKind kind, const ProjectionHeadConfig& projection,
                 const ClassifierHeadConfig& classifier)
    : pool_(make_global_avg_pool()) {
  encoder.validate();
  if (encoder.architecture == Architecture::small_cnn) {
    build_small_cnn(encoder, trunk_);
  } else {
    build_residual(encoder, trunk_);
  }

  std::vector<std::size_t> dims;
  if (kind == HeadKind::projection) {
    dims.push_back(head_input(projection.input_dim, encoder.feature_dim, "projection head"));
    if (projection.layer_dims.empty()) throw ValidationError("projection head needs at least one layer");
    dims.insert(dims.end(), projection.layer_dims.begin(), projection.layer_dims.end());
  } else {
    dims.push_back(head_input(classifier.input_dim, encoder.feature_dim, "classifier head"));
    if (classifier.num_classes < 2) throw ValidationError("classifier needs at least two classes");
    if (classifier.hidden_dim > 0) dims.push_back(classifier.hidden_dim);
    dims.push_back(classifier.num_classes);
  }
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i + 1] == 0) throw ValidationError("head layer widths must be positive");
    if (i > 0) head_.add(make_relu());
    head_.add(make_linear("head." + std::to_string(i), dims[i], dims[i + 1]));
  }
}

std::size_t ModelBundle::num_outputs() const {
  if (head_kind_ == HeadKind::classifier) return classifier_.num_classes;
  return projection_.layer_dims.back();
}

nlohmann::json ModelBundle::config_json() const {
  nlohmann::json j{{"encoder", to_json(encoder_)}};
  if (head_kind_ == HeadKind::projection) {
    j["head_kind"] = "projection";
    j["projection"] = to_json(projection_);
  } else {
    j["head_kind"] = "classifier";
    j["classifier"] = to_json(classifier_);
  }
  return j;
}

std::string ModelBundle::fingerprint() const { return config_fingerprint(config_json()); }

std::string ModelBundle::encoder_fingerprint() const { return config_fingerprint(to_json(encoder_)); }

ModelBundle build_model(const EncoderConfig& encoder, HeadKind kind, const ProjectionHeadConfig& projection,
                        const ClassifierHeadConfig& classifier, std::uint64_t init_seed) {
  ModelBundle m;
  m.network_ = std::make_shared<const Network>(encoder, kind, projection, classifier);
  m.encoder_ = encoder;
  m.head_kind_ = kind;
  m.projection_ = projection;
  m.classifier_ = classifier;
  // Resolve "match the encoder" so the stored config is explicit.
  if (kind == HeadKind::projection) {
    m.projection_.input_dim = encoder.feature_dim;
  } else {
    m.classifier_.input_dim = encoder.feature_dim;
  }
  m.network_->trunk().register_parameters(m.params_, init_seed);
  m.network_->head().register_parameters(m.params_, init_seed);
  return m;
}

ModelBundle build_projection_model(const EncoderConfig& encoder, const ProjectionHeadConfig& head,
                                   std::uint64_t init_seed) {
  return build_model(encoder, HeadKind::projection, head, {}, init_seed);
}

ModelBundle build_classifier_model(const EncoderConfig& encoder, const ClassifierHeadConfig& head,
                                   std::uint64_t init_seed) {
  return build_model(encoder, HeadKind::classifier, {}, head, init_seed);
}

Tensor images_to_batch(std::span<const Image> images) {
  if (images.empty()) throw ValidationError("empty image batch");
  const std::size_t h = images[0].height(), w = images[0].width();
  Tensor batch({images.size(), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.height() != h || img.width() != w) throw ValidationError("images in a batch must share one size");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) batch.at(n, c, y, x) = img.at(y, x, c);
  }
  return batch;
}

Tensor forward(ModelBundle& model, const Tensor& batch, ForwardMode mode, ForwardTape* tape) {
  return run(model, batch, mode, tape, mode.training ? &model.parameters() : nullptr);
}

Tensor forward(const ModelBundle& model, const Tensor& batch, ForwardTape* tape) {
  return run(model, batch, ForwardMode{}, tape, nullptr);
}

Tensor forward_embed(const ModelBundle& model, const Tensor& batch) {
  if (model.head_kind() != HeadKind::projection) throw ValidationError("forward_embed needs a projection head");
  return forward(model, batch);
}

Tensor forward_classify(const ModelBundle& model, const Tensor& batch) {
  if (model.head_kind() != HeadKind::classifier) throw ValidationError("forward_classify needs a classifier head");
  return forward(model, batch);
}

Tensor encode_features(const ModelBundle& model, const Tensor& batch) {
  ForwardTape tape;
  forward(model, batch, &tape);
  return tape.features;
}

Tensor backward_to_feature_map(const ModelBundle& model, const ForwardTape& tape, const Tensor& grad_output,
                               ParameterSet& grads) {
  const Network& net = model.network();
  const ParameterSet& p = model.parameters();
  const Tensor g_features = net.head().backward(p, grad_output, tape.head, tape.mode, grads);
  return net.pool().backward(p, g_features, tape.pool, tape.mode, grads);
}

ParameterSet backward(const ModelBundle& model, const ForwardTape& tape, const Tensor& grad_output,
                      BackwardOptions options) {
  ParameterSet grads = model.parameters().zeros_like();
  const Tensor g_map = backward_to_feature_map(model, tape, grad_output, grads);
  if (!options.head_only) {
    model.network().trunk().backward(model.parameters(), g_map, tape.trunk, tape.mode, grads);
  }
  return grads;
}

std::vector<ParamSlot> parameter_slots(ModelBundle& model, const ParameterSet& grads,
                                       const std::function<bool(const std::string&)>& filter) {
  std::vector<ParamSlot> slots;
  for (auto& entry : model.parameters()) {
    if (!entry.trainable || (filter && !filter(entry.name))) continue;
    slots.push_back({entry.name, &entry.value, &grads.at(entry.name)});
  }
  return slots;
}

bool is_encoder_parameter(const std::string& name) { return name.rfind("encoder.", 0) == 0; }

bool is_head_parameter(const std::string& name) { return name.rfind("head.", 0) == 0; }

Checkpoint make_checkpoint(const ModelBundle& model, const OptimizerState* optimizer, int epoch,
                           const nlohmann::json& metrics) {
  Checkpoint ckpt;
  ckpt.metadata["config"] = model.config_json();
  ckpt.metadata["fingerprint"] = model.fingerprint();
  ckpt.metadata["encoder_fingerprint"] = model.encoder_fingerprint();
  ckpt.metadata["epoch"] = epoch;
  ckpt.metadata["metrics"] = metrics;
  ckpt.metadata["parameter_count"] = model.parameter_count();
  for (const auto& entry : model.parameters()) {
    ckpt.arrays.push_back({entry.name, entry.value.shape(), to_float(entry.value)});
  }
  if (optimizer) {
    ckpt.metadata["optimizer"] = {{"step", optimizer->step}};
    for (const auto& [name, m] : optimizer->momentum) {
      ckpt.arrays.push_back({kMomentumPrefix + name, m.shape(), to_float(m)});
    }
  }
  return ckpt;
}

ModelBundle model_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.metadata.contains("config")) throw FormatError("checkpoint has no model config");
  const auto& cfg = checkpoint.metadata["config"];
  const EncoderConfig enc = encoder_config_from_json(cfg.at("encoder"));
  ModelBundle m;
  if (cfg.value("head_kind", "") == "projection") {
    m = build_projection_model(enc, projection_config_from_json(cfg.at("projection")), 0);
  } else if (cfg.value("head_kind", "") == "classifier") {
    m = build_classifier_model(enc, classifier_config_from_json(cfg.at("classifier")), 0);
  } else {
    throw FormatError("checkpoint config has an unknown head kind");
  }
  if (m.fingerprint() != checkpoint.fingerprint()) {
    throw FingerprintError("rebuilt model fingerprint " + m.fingerprint() + " differs from checkpoint " +
                           checkpoint.fingerprint());
  }
  copy_into(m.parameters(), checkpoint, [](const std::string&) { return true; });
  return m;
}

OptimizerState optimizer_from_checkpoint(const Checkpoint& checkpoint) {
  OptimizerState state;
  if (checkpoint.metadata.contains("optimizer")) state.step = checkpoint.metadata["optimizer"].value("step", 0ull);
  const std::string prefix = kMomentumPrefix;
  for (const auto& a : checkpoint.arrays) {
    if (a.name.rfind(prefix, 0) == 0) state.momentum[a.name.substr(prefix.size())] = from_array(a);
  }
  return state;
}

ModelBundle transfer_encoder(const Checkpoint& checkpoint, const ClassifierHeadConfig& classifier,
                             std::uint64_t init_seed) {
  if (!checkpoint.metadata.contains("config")) throw FormatError("checkpoint has no model config");
  const auto& cfg = checkpoint.metadata["config"];
  const EncoderConfig enc = encoder_config_from_json(cfg.at("encoder"));
  if (checkpoint.metadata.contains("encoder_fingerprint") &&
      checkpoint.metadata["encoder_fingerprint"].get<std::string>() != config_fingerprint(to_json(enc))) {
    throw FingerprintError("checkpoint encoder fingerprint does not match its encoder config");
  }
  if (classifier.input_dim != 0 && classifier.input_dim != enc.feature_dim) {
    throw FingerprintError("classifier expects " + std::to_string(classifier.input_dim) +
                           " features but the checkpoint encoder (" + to_string(enc.architecture) + ") produces " +
                           std::to_string(enc.feature_dim));
  }
  ModelBundle m = build_classifier_model(enc, classifier, init_seed);
  copy_into(m.parameters(), checkpoint, is_encoder_parameter);
  return m;
}

}  // namespace cdssl
