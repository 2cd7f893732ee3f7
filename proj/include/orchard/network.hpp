#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "orchard/image.hpp"
#include "orchard/nn.hpp"

namespace orchard {

// Probability vector over the 7 count classes plus its argmax.
struct CountPrediction {
  std::array<float, 7> probs{};
  int argmax_count = 0;  // ties broken toward the lower count
};

constexpr int kPatchSide = 227;
constexpr int kCountClasses = 7;

// Input normalization applied before the first conv layer.
constexpr float kInputMean = 0.5f;
constexpr float kInputStd = 0.25f;

// AlexNet-topology count classifier: five conv stages feeding three fully
// connected stages that end in 7 logits. No local response norm; dropout 0.5
// between the fully connected stages.
class CountNetwork {
 public:
  CountNetwork();

  // New fully connected head, seeded. Conv stages are He-initialized from the
  // same seed unless conv weights are loaded afterwards.
  void init_weights(std::uint64_t seed);

  // Replaces conv stage parameters with the contents of a feature-weights
  // file. Throws IncompatibleWeights naming the offending stage on mismatch.
  void load_conv_features(const std::string& path);
  void save_conv_features(const std::string& path) const;

  // x: [N,3,H,W] normalized floats -> logits [N,7].
  // In training mode dropout draws from `rng`.
  nn::Tensor forward(const nn::Tensor& x, bool train = false, Rng* rng = nullptr);

  // Split forward pass: conv stages only (features = flattened pool5),
  // then the fully connected head. forward() == head_forward(features_forward()).
  nn::Tensor features_forward(const nn::Tensor& x);
  nn::Tensor head_forward(const nn::Tensor& features, bool train = false, Rng* rng = nullptr);

  // Full backward from dlogits after a forward(train=true) call.
  void backward(const nn::Tensor& dlogits);
  // Head-only backward after head_forward(train=true); conv grads untouched.
  void head_backward(const nn::Tensor& dlogits);

  void zero_grads();
  // SGD with momentum; distinct learning rates for conv and fc groups.
  void sgd_step(float conv_lr, float fc_lr, float momentum);

  std::vector<nn::Param*> params();
  std::vector<const nn::Param*> params() const;

  int feature_dim() const { return fc6_.in_features; }

  // Batched prediction on normalized inputs (inference mode).
  std::vector<CountPrediction> predict_batch(const nn::Tensor& x);

  nlohmann::json arch_json() const;

 private:
  nn::Conv2d conv1_, conv2_, conv3_, conv4_, conv5_;
  nn::MaxPool pool_{3, 2};
  nn::Linear fc6_, fc7_, fc8_;
  float dropout_p_ = 0.5f;

  // per-batch caches for backward
  struct Cache;
  std::unique_ptr<Cache> cache_;
  std::vector<float> col_ws_;

 public:
  ~CountNetwork();
  CountNetwork(const CountNetwork& other);
  CountNetwork& operator=(const CountNetwork& other);
};

// Converts an RGB patch (must be 227x227) to a normalized [1,3,227,227] slab
// appended at batch slot `slot` of x.
void fill_input_slot(nn::Tensor& x, int slot, const ImageU8& patch);

CountPrediction predict(CountNetwork& net, const ImageU8& patch);

// --- checkpoint ----------------------------------------------------------

// Binary checkpoint: magic, metadata JSON (arch, schedule, seed), tensors.
// Byte-stable across save/load/save.
void save_checkpoint(const std::string& path, const CountNetwork& net,
                     const nlohmann::json& metadata);
nlohmann::json load_checkpoint(const std::string& path, CountNetwork& net);

}  // namespace orchard
