#include "orchard/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>

#include "orchard/errors.hpp"

namespace orchard {

using nn::Tensor;

struct CountNetwork::Cache {
  Tensor c1, p1, c2, p2, c3, c4, c5, p5, flat, f6, f7, logits;
  Tensor dflat;
  std::vector<std::int32_t> am1, am2, am5;
  std::vector<float> drop6, drop7;
  const Tensor* x = nullptr;  // borrowed; must outlive the fwd/bwd pair
  bool train = false;
};

CountNetwork::CountNetwork() : cache_(std::make_unique<Cache>()) {
  conv1_.init(3, 64, 11, 4, 2, "conv1");
  conv2_.init(64, 192, 5, 1, 2, "conv2");
  conv3_.init(192, 384, 3, 1, 1, "conv3");
  conv4_.init(384, 256, 3, 1, 1, "conv4");
  conv5_.init(256, 256, 3, 1, 1, "conv5");
  fc6_.init(256 * 6 * 6, 4096, "fc6");
  fc7_.init(4096, 4096, "fc7");
  fc8_.init(4096, kCountClasses, "fc8");
}

CountNetwork::~CountNetwork() = default;

CountNetwork::CountNetwork(const CountNetwork& other) : CountNetwork() {
  auto dst = params();
  auto src = other.params();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i]->value = src[i]->value;
    dst[i]->momentum = src[i]->momentum;
  }
}

CountNetwork& CountNetwork::operator=(const CountNetwork& other) {
  if (this == &other) return *this;
  auto dst = params();
  auto src = other.params();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    dst[i]->value = src[i]->value;
    dst[i]->momentum = src[i]->momentum;
  }
  return *this;
}

std::vector<nn::Param*> CountNetwork::params() {
  return {&conv1_.weight, &conv1_.bias, &conv2_.weight, &conv2_.bias, &conv3_.weight,
          &conv3_.bias,   &conv4_.weight, &conv4_.bias, &conv5_.weight, &conv5_.bias,
          &fc6_.weight,   &fc6_.bias,   &fc7_.weight,   &fc7_.bias,   &fc8_.weight,
          &fc8_.bias};
}

std::vector<const nn::Param*> CountNetwork::params() const {
  auto* self = const_cast<CountNetwork*>(this);
  std::vector<const nn::Param*> out;
  for (auto* p : self->params()) out.push_back(p);
  return out;
}

void CountNetwork::init_weights(std::uint64_t seed) {
  Rng rng(seed);
  for (auto* p : params()) {
    if (p->name.ends_with(".bias")) {
      p->value.zero();
      p->momentum.zero();
      continue;
    }
    // He-normal with fan_in = columns of the weight matrix
    const int fan_in = p->value.shape[1];
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& v : p->value.data) v = static_cast<float>(rng.normal(0.0, stddev));
    p->momentum.zero();
  }
}

Tensor CountNetwork::features_forward(const Tensor& x) {
  Cache& c = *cache_;
  conv1_.forward(x, c.c1, col_ws_);
  nn::relu_forward(c.c1);
  pool_.forward(c.c1, c.p1, c.am1);
  conv2_.forward(c.p1, c.c2, col_ws_);
  nn::relu_forward(c.c2);
  pool_.forward(c.c2, c.p2, c.am2);
  conv3_.forward(c.p2, c.c3, col_ws_);
  nn::relu_forward(c.c3);
  conv4_.forward(c.c3, c.c4, col_ws_);
  nn::relu_forward(c.c4);
  conv5_.forward(c.c4, c.c5, col_ws_);
  nn::relu_forward(c.c5);
  pool_.forward(c.c5, c.p5, c.am5);
  Tensor flat;
  flat.shape = {c.p5.shape[0],
                c.p5.shape[1] * c.p5.shape[2] * c.p5.shape[3]};
  flat.data = c.p5.data;
  if (flat.shape[1] != fc6_.in_features)
    throw InvalidInput("features_forward: input spatial size does not map to " +
                       std::to_string(fc6_.in_features) + " features (got " +
                       std::to_string(flat.shape[1]) + ")");
  c.x = &x;
  return flat;
}

Tensor CountNetwork::head_forward(const Tensor& features, bool train, Rng* rng) {
  Cache& c = *cache_;
  c.flat = features;
  c.train = train;
  fc6_.forward(c.flat, c.f6);
  nn::relu_forward(c.f6);
  if (train && rng) nn::dropout_forward(c.f6, dropout_p_, *rng, c.drop6);
  fc7_.forward(c.f6, c.f7);
  nn::relu_forward(c.f7);
  if (train && rng) nn::dropout_forward(c.f7, dropout_p_, *rng, c.drop7);
  fc8_.forward(c.f7, c.logits);
  if (!train) {
    c.drop6.clear();
    c.drop7.clear();
  }
  return c.logits;
}

Tensor CountNetwork::forward(const Tensor& x, bool train, Rng* rng) {
  Tensor features = features_forward(x);
  return head_forward(features, train, rng);
}

void CountNetwork::head_backward(const Tensor& dlogits) {
  Cache& c = *cache_;
  Tensor d7, d6, dflat;
  fc8_.backward(c.f7, dlogits, &d7);
  if (!c.drop7.empty()) nn::dropout_backward(d7, c.drop7);
  nn::relu_backward(c.f7, d7);
  fc7_.backward(c.f6, d7, &d6);
  if (!c.drop6.empty()) nn::dropout_backward(d6, c.drop6);
  nn::relu_backward(c.f6, d6);
  fc6_.backward(c.flat, d6, &dflat);
  c.dflat = std::move(dflat);
}

void CountNetwork::backward(const Tensor& dlogits) {
  Cache& c = *cache_;
  head_backward(dlogits);
  Tensor dp5;
  dp5.shape = c.p5.shape;
  dp5.data = std::move(cache_->dflat.data);
  Tensor d5(c.c5.shape), d4, d3, d2, dp2, d1, dp1;
  pool_.backward(dp5, c.am5, d5);
  nn::relu_backward(c.c5, d5);
  conv5_.backward(c.c4, d5, &d4, col_ws_);
  nn::relu_backward(c.c4, d4);
  conv4_.backward(c.c3, d4, &d3, col_ws_);
  nn::relu_backward(c.c3, d3);
  conv3_.backward(c.p2, d3, &dp2, col_ws_);
  d2 = Tensor(c.c2.shape);
  pool_.backward(dp2, c.am2, d2);
  nn::relu_backward(c.c2, d2);
  conv2_.backward(c.p1, d2, &dp1, col_ws_);
  d1 = Tensor(c.c1.shape);
  pool_.backward(dp1, c.am1, d1);
  nn::relu_backward(c.c1, d1);
  conv1_.backward(*c.x, d1, nullptr, col_ws_);
}

void CountNetwork::zero_grads() {
  for (auto* p : params()) p->grad.zero();
}

void CountNetwork::sgd_step(float conv_lr, float fc_lr, float momentum) {
  for (auto* p : params()) {
    const float lr = p->is_conv ? conv_lr : fc_lr;
    if (lr == 0.f) continue;
    float* w = p->value.ptr();
    float* g = p->grad.ptr();
    float* m = p->momentum.ptr();
    const std::size_t n = p->value.data.size();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = momentum * m[i] - lr * g[i];
      w[i] += m[i];
    }
  }
}

std::vector<CountPrediction> CountNetwork::predict_batch(const Tensor& x) {
  Tensor logits = forward(x, false, nullptr);
  Tensor probs;
  nn::softmax_rows(logits, probs);
  std::vector<CountPrediction> out(static_cast<std::size_t>(x.shape[0]));
  for (int i = 0; i < x.shape[0]; ++i) {
    CountPrediction& p = out[i];
    const float* row = probs.ptr() + static_cast<std::size_t>(i) * kCountClasses;
    int best = 0;
    for (int j = 0; j < kCountClasses; ++j) {
      p.probs[j] = row[j];
      if (row[j] > row[best]) best = j;
    }
    p.argmax_count = best;
  }
  return out;
}

nlohmann::json CountNetwork::arch_json() const {
  nlohmann::json j;
  j["name"] = "alexnet7";
  j["input"] = {3, kPatchSide, kPatchSide};
  j["conv_channels"] = {64, 192, 384, 256, 256};
  j["fc"] = {4096, 4096, kCountClasses};
  j["dropout"] = dropout_p_;
  return j;
}

void fill_input_slot(nn::Tensor& x, int slot, const ImageU8& patch) {
  if (patch.width != kPatchSide || patch.height != kPatchSide)
    throw InvalidInput("network input patch must be 227x227, got " +
                       std::to_string(patch.width) + "x" + std::to_string(patch.height));
  const std::size_t plane = static_cast<std::size_t>(kPatchSide) * kPatchSide;
  float* base = x.ptr() + static_cast<std::size_t>(slot) * 3 * plane;
  for (int c = 0; c < 3; ++c) {
    float* dst = base + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      float v = patch.data[i * 3 + c] / 255.f;
      dst[i] = (v - kInputMean) / kInputStd;
    }
  }
}

CountPrediction predict(CountNetwork& net, const ImageU8& patch) {
  Tensor x({1, 3, kPatchSide, kPatchSide});
  fill_input_slot(x, 0, patch);
  return net.predict_batch(x)[0];
}

// --- serialization --------------------------------------------------------

namespace {

constexpr char kCkptMagic[8] = {'O', 'C', 'K', 'P', 'T', '0', '0', '1'};
constexpr char kFeatMagic[8] = {'O', 'C', 'F', 'E', 'A', 'T', '0', '1'};

void write_tensor(std::ofstream& f, const std::string& name, const Tensor& t) {
  std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
  f.write(reinterpret_cast<const char*>(&name_len), 4);
  f.write(name.data(), name_len);
  std::uint32_t ndim = static_cast<std::uint32_t>(t.shape.size());
  f.write(reinterpret_cast<const char*>(&ndim), 4);
  for (int d : t.shape) {
    std::uint64_t v = static_cast<std::uint64_t>(d);
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
  f.write(reinterpret_cast<const char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<NamedTensor> read_tensors(std::ifstream& f) {
  std::uint32_t count = 0;
  f.read(reinterpret_cast<char*>(&count), 4);
  std::vector<NamedTensor> out(count);
  for (auto& nt : out) {
    std::uint32_t name_len = 0;
    f.read(reinterpret_cast<char*>(&name_len), 4);
    nt.name.resize(name_len);
    f.read(nt.name.data(), name_len);
    std::uint32_t ndim = 0;
    f.read(reinterpret_cast<char*>(&ndim), 4);
    nt.tensor.shape.resize(ndim);
    for (auto& d : nt.tensor.shape) {
      std::uint64_t v = 0;
      f.read(reinterpret_cast<char*>(&v), 8);
      d = static_cast<int>(v);
    }
    nt.tensor.data.resize(nt.tensor.numel());
    f.read(reinterpret_cast<char*>(nt.tensor.data.data()),
           static_cast<std::streamsize>(nt.tensor.data.size() * sizeof(float)));
    if (!f) throw IoError("truncated tensor stream");
  }
  return out;
}

void write_header(std::ofstream& f, const char magic[8], const std::string& meta) {
  f.write(magic, 8);
  std::uint64_t len = meta.size();
  f.write(reinterpret_cast<const char*>(&len), 8);
  f.write(meta.data(), static_cast<std::streamsize>(meta.size()));
}

std::string read_header(std::ifstream& f, const char magic[8], const std::string& what) {
  char m[8];
  f.read(m, 8);
  if (!f || std::memcmp(m, magic, 8) != 0) throw IoError(what + ": bad magic");
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), 8);
  std::string meta(len, '\0');
  f.read(meta.data(), static_cast<std::streamsize>(len));
  if (!f) throw IoError(what + ": truncated header");
  return meta;
}

}  // namespace

void CountNetwork::save_conv_features(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  nlohmann::json meta;
  meta["arch"] = arch_json();
  meta["kind"] = "conv_features";
  write_header(f, kFeatMagic, meta.dump());
  std::vector<const nn::Param*> conv;
  for (auto* p : params())
    if (p->is_conv) conv.push_back(p);
  std::uint32_t count = static_cast<std::uint32_t>(conv.size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (auto* p : conv) write_tensor(f, p->name, p->value);
  if (!f) throw IoError("failed writing " + path);
}

void CountNetwork::load_conv_features(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  read_header(f, kFeatMagic, "feature weights");
  auto tensors = read_tensors(f);
  auto ps = params();
  for (auto& nt : tensors) {
    nn::Param* target = nullptr;
    for (auto* p : ps)
      if (p->name == nt.name) target = p;
    if (!target || !target->is_conv)
      throw IncompatibleWeights("feature weights: unknown conv tensor " + nt.name);
    if (nt.tensor.shape != target->value.shape)
      throw IncompatibleWeights("feature weights: shape mismatch at " + nt.name);
    target->value = std::move(nt.tensor);
    target->momentum.zero();
  }
}

void save_checkpoint(const std::string& path, const CountNetwork& net,
                     const nlohmann::json& metadata) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path + " for writing");
  write_header(f, kCkptMagic, metadata.dump());
  auto ps = net.params();
  std::uint32_t count = static_cast<std::uint32_t>(ps.size());
  f.write(reinterpret_cast<const char*>(&count), 4);
  for (auto* p : ps) write_tensor(f, p->name, p->value);
  if (!f) throw IoError("failed writing " + path);
}

nlohmann::json load_checkpoint(const std::string& path, CountNetwork& net) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string meta = read_header(f, kCkptMagic, "checkpoint");
  auto tensors = read_tensors(f);
  auto ps = net.params();
  if (tensors.size() != ps.size()) throw IncompatibleWeights("checkpoint: tensor count mismatch");
  for (auto& nt : tensors) {
    nn::Param* target = nullptr;
    for (auto* p : ps)
      if (p->name == nt.name) target = p;
    if (!target) throw IncompatibleWeights("checkpoint: unknown tensor " + nt.name);
    if (nt.tensor.shape != target->value.shape)
      throw IncompatibleWeights("checkpoint: shape mismatch at " + nt.name);
    target->value = std::move(nt.tensor);
    target->momentum.zero();
  }
  return nlohmann::json::parse(meta);
}

}  // namespace orchard
