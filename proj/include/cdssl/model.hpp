#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdssl/checkpoint.hpp"
#include "cdssl/image.hpp"
#include "cdssl/layers.hpp"
#include "cdssl/optim.hpp"
#include "cdssl/parameters.hpp"

namespace cdssl {

enum class Architecture { small_cnn, reference_resnet50_style };

std::string to_string(Architecture arch);
Architecture architecture_from_string(const std::string& name);

struct EncoderConfig {
  Architecture architecture = Architecture::small_cnn;
  /// Width of the pooled feature vector; for small_cnn this is the channel
  /// count of the last conv block, for the residual encoder 32 * base_width.
  std::size_t feature_dim = 128;
  std::size_t input_size = 64;

  /// small_cnn: channels of the first three blocks (the fourth has feature_dim).
  std::vector<std::size_t> channels{8, 16, 32};
  bool batch_norm = false;

  /// Residual encoder: bottleneck blocks per stage and stem width
  /// ({3, 4, 6, 3} and 64 give the ResNet-50 layout with 2048 features).
  std::vector<std::size_t> stage_blocks{3, 4, 6, 3};
  std::size_t base_width = 64;

  static EncoderConfig reference();
  void validate() const;
};

struct ProjectionHeadConfig {
  /// Expected encoder feature width; 0 means "whatever the encoder produces".
  std::size_t input_dim = 0;
  std::vector<std::size_t> layer_dims{2048, 1024};
};

struct ClassifierHeadConfig {
  std::size_t input_dim = 0;
  /// 0 gives a single linear layer (linear probe).
  std::size_t hidden_dim = 512;
  std::size_t num_classes = 2;
};

enum class HeadKind { projection, classifier };

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ProjectionHeadConfig& c);
ProjectionHeadConfig projection_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ClassifierHeadConfig& c);
ClassifierHeadConfig classifier_config_from_json(const nlohmann::json& j);

/// Encoder trunk, pooling and head layers built from configs. Immutable and
/// shared between bundle copies.
class Network {
 public:
  Network(const EncoderConfig& encoder, HeadKind kind, const ProjectionHeadConfig& projection,
          const ClassifierHeadConfig& classifier);

  const Sequential& trunk() const { return trunk_; }
  const Layer& pool() const { return *pool_; }
  const Sequential& head() const { return head_; }
  std::size_t trunk_blocks() const { return trunk_.size(); }

 private:
  Sequential trunk_;
  LayerPtr pool_;
  Sequential head_;
};

/// Encoder parameters plus exactly one head. Parameter names follow
/// `encoder.<block>.<layer>.<weight|bias>` and `head.<index>.<weight|bias>`.
class ModelBundle {
 public:
  ModelBundle() = default;

  HeadKind head_kind() const { return head_kind_; }
  const EncoderConfig& encoder_config() const { return encoder_; }
  const ProjectionHeadConfig& projection_config() const { return projection_; }
  const ClassifierHeadConfig& classifier_config() const { return classifier_; }
  std::size_t num_outputs() const;

  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }
  const Network& network() const { return *network_; }

  nlohmann::json config_json() const;
  /// Hash of every config (encoder and head).
  std::string fingerprint() const;
  std::string encoder_fingerprint() const;

  friend ModelBundle build_model(const EncoderConfig&, HeadKind, const ProjectionHeadConfig&,
                                 const ClassifierHeadConfig&, std::uint64_t);

 private:
  EncoderConfig encoder_;
  HeadKind head_kind_ = HeadKind::projection;
  ProjectionHeadConfig projection_;
  ClassifierHeadConfig classifier_;
  ParameterSet params_;
  std::shared_ptr<const Network> network_;
};

/// Throws ValidationError when the head's expected input width differs from
/// the encoder's feature width.
ModelBundle build_model(const EncoderConfig& encoder, HeadKind kind,
                        const ProjectionHeadConfig& projection,
                        const ClassifierHeadConfig& classifier, std::uint64_t init_seed);
ModelBundle build_projection_model(const EncoderConfig& encoder, const ProjectionHeadConfig& head,
                                   std::uint64_t init_seed);
ModelBundle build_classifier_model(const EncoderConfig& encoder, const ClassifierHeadConfig& head,
                                   std::uint64_t init_seed);

/// Everything backward needs from one forward pass.
struct ForwardTape {
  ForwardMode mode;
  LayerCache trunk;
  LayerCache pool;
  LayerCache head;
  Tensor feature_map;  // trunk output, N x C x h x w
  Tensor features;     // pooled, N x feature_dim
};

/// Stacks H x W x 3 images into an N x 3 x H x W batch.
Tensor images_to_batch(std::span<const Image> images);

/// Runs encoder and head. In training mode batch-norm running statistics of
/// `model` are updated, hence the non-const overload.
Tensor forward(ModelBundle& model, const Tensor& batch, ForwardMode mode, ForwardTape* tape);
Tensor forward(const ModelBundle& model, const Tensor& batch, ForwardTape* tape = nullptr);

/// Evaluation-mode embeddings; requires a projection head.
Tensor forward_embed(const ModelBundle& model, const Tensor& batch);
/// Evaluation-mode logits; requires a classifier head.
Tensor forward_classify(const ModelBundle& model, const Tensor& batch);
/// Evaluation-mode pooled encoder features.
Tensor encode_features(const ModelBundle& model, const Tensor& batch);

struct BackwardOptions {
  /// Stop after the head; encoder gradients stay zero.
  bool head_only = false;
};

/// Gradients of sum(grad_output * output) for every parameter, returned with
/// the bundle's names and shapes (buffers get zero).
ParameterSet backward(const ModelBundle& model, const ForwardTape& tape, const Tensor& grad_output,
                      BackwardOptions options = {});

/// Backpropagates through head and pooling only; returns d/d(feature_map).
Tensor backward_to_feature_map(const ModelBundle& model, const ForwardTape& tape, const Tensor& grad_output,
                               ParameterSet& grads);

/// Optimizer slots for every trainable parameter accepted by `filter`.
std::vector<ParamSlot> parameter_slots(ModelBundle& model, const ParameterSet& grads,
                                       const std::function<bool(const std::string&)>& filter = {});

bool is_encoder_parameter(const std::string& name);
bool is_head_parameter(const std::string& name);

/// Snapshot of the model (and optionally optimizer state) as a checkpoint.
Checkpoint make_checkpoint(const ModelBundle& model, const OptimizerState* optimizer, int epoch,
                           const nlohmann::json& metrics = nlohmann::json::object());

/// Rebuilds the full bundle stored in a checkpoint.
ModelBundle model_from_checkpoint(const Checkpoint& checkpoint);
/// Restores optimizer momentum buffers stored by make_checkpoint.
OptimizerState optimizer_from_checkpoint(const Checkpoint& checkpoint);

/// New classifier bundle whose encoder arrays are copied verbatim from the
/// checkpoint; the projection head is dropped and the classifier is freshly
/// initialised from `init_seed`.
ModelBundle transfer_encoder(const Checkpoint& checkpoint, const ClassifierHeadConfig& classifier,
                             std::uint64_t init_seed);

}  // namespace cdssl
