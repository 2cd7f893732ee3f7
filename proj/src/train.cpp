#include "orchard/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "orchard/errors.hpp"

namespace fs = std::filesystem;

namespace orchard {

void TrainingSchedule::validate() const {
  if (base_lr <= 0 || fine_tune_conv_lr <= 0 || lr_decay_factor <= 0)
    throw InvalidInput("schedule: learning rates and decay must be positive");
  if (momentum < 0 || momentum >= 1) throw InvalidInput("schedule: momentum must be in [0,1)");
  if (phase1_epochs < 0 || phase2_epochs < 0 || phase2_epochs > 30)
    throw InvalidInput("schedule: phase1_epochs >= 0 and phase2_epochs in 0..30 required");
  if (batch_size < 1) throw InvalidInput("schedule: batch size must be >= 1");
  if (lr_decay_every < 1) throw InvalidInput("schedule: lr_decay_every must be >= 1");
}

std::pair<double, double> group_lrs(const TrainingSchedule& s, int phase, int epoch_in_phase) {
  if (phase == 1) return {0.0, s.base_lr};  // conv frozen
  const int steps = (epoch_in_phase - 1) / s.lr_decay_every;
  const double factor = std::pow(s.lr_decay_factor, steps);
  return {s.fine_tune_conv_lr * factor, s.base_lr * factor};
}

namespace {

struct Item {
  std::string path;
  int label = 0;
};

// Decoded-patch cache; patches are small enough that a typical training run
// fits, but stay within a fixed byte budget.
class PatchLoader {
 public:
  PatchLoader(std::string root, std::size_t budget_bytes = std::size_t(16) << 27)
      : root_(std::move(root)), budget_(budget_bytes) {}

  const ImageU8& get(const std::string& rel) {
    auto it = cache_.find(rel);
    if (it != cache_.end()) return it->second;
    ImageU8 img = read_png((fs::path(root_) / rel).string());
    std::size_t bytes = img.data.size();
    if (used_ + bytes > budget_) {
      scratch_ = std::move(img);
      return scratch_;
    }
    used_ += bytes;
    return cache_.emplace(rel, std::move(img)).first->second;
  }

 private:
  std::string root_;
  std::size_t budget_;
  std::size_t used_ = 0;
  std::unordered_map<std::string, ImageU8> cache_;
  ImageU8 scratch_;
};

nn::Tensor make_batch(PatchLoader& loader, const std::vector<Item>& items,
                      const std::vector<int>& order, std::size_t begin, std::size_t end,
                      std::vector<int>& labels) {
  const ImageU8& first = loader.get(items[order[begin]].path);
  nn::Tensor x({static_cast<int>(end - begin), 3, first.height, first.width});
  labels.clear();
  for (std::size_t i = begin; i < end; ++i) {
    const Item& item = items[order[i]];
    const ImageU8& img = loader.get(item.path);
    fill_input_slot(x, static_cast<int>(i - begin), img);
    labels.push_back(item.label);
  }
  return x;
}

int argmax_row(const float* row, int n) {
  int best = 0;
  for (int j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

struct EvalOut {
  double loss = 0;
  double acc = 0;
};

// Inference pass over cached feature rows.
EvalOut eval_features(CountNetwork& net, const nn::Tensor& feats, const std::vector<int>& labels,
                      int batch) {
  EvalOut out;
  const int n = feats.shape[0], dim = feats.shape[1];
  int correct = 0;
  double loss = 0;
  for (int b = 0; b < n; b += batch) {
    const int bs = std::min(batch, n - b);
    nn::Tensor fb({bs, dim});
    std::copy_n(feats.ptr() + static_cast<std::size_t>(b) * dim, static_cast<std::size_t>(bs) * dim,
                fb.ptr());
    nn::Tensor logits = net.head_forward(fb, false, nullptr);
    std::vector<int> lab(labels.begin() + b, labels.begin() + b + bs);
    loss += nn::softmax_cross_entropy(logits, lab, nullptr, nullptr) * bs;
    for (int i = 0; i < bs; ++i)
      correct += argmax_row(logits.ptr() + static_cast<std::size_t>(i) * kCountClasses,
                            kCountClasses) == lab[i];
  }
  out.loss = loss / std::max(1, n);
  out.acc = static_cast<double>(correct) / std::max(1, n);
  return out;
}

EvalOut eval_images(CountNetwork& net, PatchLoader& loader, const std::vector<Item>& items,
                    int batch) {
  EvalOut out;
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  int correct = 0;
  double loss = 0;
  for (std::size_t b = 0; b < items.size(); b += batch) {
    const std::size_t e = std::min(items.size(), b + batch);
    std::vector<int> labels;
    nn::Tensor x = make_batch(loader, items, order, b, e, labels);
    nn::Tensor logits = net.forward(x, false, nullptr);
    loss += nn::softmax_cross_entropy(logits, labels, nullptr, nullptr) * static_cast<double>(e - b);
    for (std::size_t i = 0; i < e - b; ++i)
      correct += argmax_row(logits.ptr() + i * kCountClasses, kCountClasses) == labels[i];
  }
  out.loss = loss / std::max<std::size_t>(1, items.size());
  out.acc = static_cast<double>(correct) / std::max<std::size_t>(1, items.size());
  return out;
}

}  // namespace

TrainResult train(CountNetwork& net, const DatasetManifest& manifest, const std::string& data_root,
                  const TrainingSchedule& schedule) {
  schedule.validate();
  std::vector<Item> train_items, val_items;
  for (const auto& r : manifest.rows) {
    if (r.split == "train") train_items.push_back({r.path, r.count});
    if (r.split == "val") val_items.push_back({r.path, r.count});
  }
  if (train_items.empty() || val_items.empty())
    throw InvalidInput("train: manifest needs non-empty train and val splits");
  {
    std::array<int, 7> h{};
    for (const auto& i : train_items) ++h[i.label];
    for (int c = 0; c < 7; ++c)
      if (h[c] == 0)
        throw InvalidInput("train: count class " + std::to_string(c) +
                           " missing from the training split");
  }

  PatchLoader loader(data_root);
  Rng rng(schedule.seed);
  Rng drop_rng = rng.fork(7);
  TrainResult result;
  result.best = std::make_unique<CountNetwork>(net);
  CountNetwork last_good(net);

  int global_epoch = 0;
  const int B = schedule.batch_size;

  auto record = [&](int phase, double fc_lr, double tr_loss, double tr_acc, const EvalOut& val) {
    ++global_epoch;
    EpochStats s;
    s.epoch = global_epoch;
    s.phase = phase;
    s.lr = fc_lr;
    s.train_loss = tr_loss;
    s.train_acc = tr_acc;
    s.val_loss = val.loss;
    s.val_acc = val.acc;
    result.history.push_back(s);
    if (!std::isfinite(tr_loss) || !std::isfinite(val.loss)) {
      net = last_good;
      throw TrainingDiverged("training loss became non-finite at epoch " +
                             std::to_string(global_epoch) +
                             "; last epoch-end state restored into the network");
    }
    if (val.acc > result.best_val_acc || result.best_epoch == 0) {
      result.best_val_acc = val.acc;
      result.best_epoch = global_epoch;
      *result.best = net;
    }
    last_good = net;
  };

  // Phase 1: conv stages frozen, so their features are constant; compute them
  // once and train the head on cached features.
  if (schedule.phase1_epochs > 0) {
    const int dim = net.feature_dim();
    auto featurize = [&](const std::vector<Item>& items) {
      nn::Tensor feats({static_cast<int>(items.size()), dim});
      std::vector<int> order(items.size());
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t b = 0; b < items.size(); b += B) {
        const std::size_t e = std::min(items.size(), b + B);
        std::vector<int> labels;
        nn::Tensor x = make_batch(loader, items, order, b, e, labels);
        nn::Tensor f = net.features_forward(x);
        std::copy(f.data.begin(), f.data.end(),
                  feats.data.begin() + static_cast<std::size_t>(b) * dim);
      }
      return feats;
    };
    nn::Tensor train_feats = featurize(train_items);
    nn::Tensor val_feats = featurize(val_items);
    std::vector<int> train_labels, val_labels;
    for (const auto& i : train_items) train_labels.push_back(i.label);
    for (const auto& i : val_items) val_labels.push_back(i.label);

    for (int epoch = 1; epoch <= schedule.phase1_epochs; ++epoch) {
      auto [conv_lr, fc_lr] = group_lrs(schedule, 1, epoch);
      std::vector<int> order(train_items.size());
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng = rng.fork(1000 + epoch);
      shuffle_rng.shuffle(order.data(), order.size());
      double loss_sum = 0;
      int correct = 0;
      for (std::size_t b = 0; b < order.size(); b += B) {
        const std::size_t e = std::min(order.size(), b + B);
        const int bs = static_cast<int>(e - b);
        nn::Tensor fb({bs, dim});
        std::vector<int> labels(bs);
        for (int i = 0; i < bs; ++i) {
          std::copy_n(train_feats.ptr() + static_cast<std::size_t>(order[b + i]) * dim, dim,
                      fb.ptr() + static_cast<std::size_t>(i) * dim);
          labels[i] = train_labels[order[b + i]];
        }
        nn::Tensor logits = net.head_forward(fb, true, &drop_rng);
        nn::Tensor dlogits;
        loss_sum += nn::softmax_cross_entropy(logits, labels, nullptr, &dlogits) * bs;
        for (int i = 0; i < bs; ++i)
          correct += argmax_row(logits.ptr() + static_cast<std::size_t>(i) * kCountClasses,
                                kCountClasses) == labels[i];
        net.zero_grads();
        net.head_backward(dlogits);
        net.sgd_step(static_cast<float>(conv_lr), static_cast<float>(fc_lr),
                     static_cast<float>(schedule.momentum));
      }
      EvalOut val = eval_features(net, val_feats, val_labels, B);
      record(1, fc_lr, loss_sum / train_items.size(),
             static_cast<double>(correct) / train_items.size(), val);
    }
  }

  // Phase 2: fine-tune everything.
  for (int epoch = 1; epoch <= schedule.phase2_epochs; ++epoch) {
    auto [conv_lr, fc_lr] = group_lrs(schedule, 2, epoch);
    std::vector<int> order(train_items.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = rng.fork(2000 + epoch);
    shuffle_rng.shuffle(order.data(), order.size());
    double loss_sum = 0;
    int correct = 0;
    for (std::size_t b = 0; b < order.size(); b += B) {
      const std::size_t e = std::min(order.size(), b + B);
      std::vector<int> labels;
      nn::Tensor x = make_batch(loader, train_items, order, b, e, labels);
      nn::Tensor logits = net.forward(x, true, &drop_rng);
      nn::Tensor dlogits;
      loss_sum +=
          nn::softmax_cross_entropy(logits, labels, nullptr, &dlogits) * static_cast<double>(e - b);
      for (std::size_t i = 0; i < e - b; ++i)
        correct += argmax_row(logits.ptr() + i * kCountClasses, kCountClasses) == labels[i];
      net.zero_grads();
      net.backward(dlogits);
      net.sgd_step(static_cast<float>(conv_lr), static_cast<float>(fc_lr),
                   static_cast<float>(schedule.momentum));
    }
    EvalOut val = eval_images(net, loader, val_items, B);
    const double train_acc = static_cast<double>(correct) / train_items.size();
    record(2, fc_lr, loss_sum / train_items.size(), train_acc, val);
    if (schedule.stop_at_train_accuracy > 0 && train_acc >= schedule.stop_at_train_accuracy) break;
  }
  return result;
}

void save_history_csv(const std::string& path, const std::vector<EpochStats>& history) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "epoch,phase,lr,train_loss,val_loss,val_acc\n";
  for (const auto& s : history)
    f << s.epoch << ',' << s.phase << ',' << s.lr << ',' << s.train_loss << ',' << s.val_loss
      << ',' << s.val_acc << '\n';
}

std::vector<CountPrediction> predict_split(CountNetwork& net, const DatasetManifest& manifest,
                                           const std::string& data_root, const std::string& split,
                                           int batch_size) {
  PatchLoader loader(data_root, std::size_t(256) << 20);
  std::vector<Item> items;
  for (const auto& r : manifest.rows)
    if (r.split == split) items.push_back({r.path, r.count});
  std::vector<CountPrediction> out;
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t b = 0; b < items.size(); b += batch_size) {
    const std::size_t e = std::min(items.size(), b + batch_size);
    std::vector<int> labels;
    nn::Tensor x = make_batch(loader, items, order, b, e, labels);
    auto preds = net.predict_batch(x);
    out.insert(out.end(), preds.begin(), preds.end());
  }
  return out;
}

nlohmann::json schedule_json(const TrainingSchedule& s) {
  nlohmann::json j;
  j["phase1_epochs"] = s.phase1_epochs;
  j["phase2_epochs"] = s.phase2_epochs;
  j["base_lr"] = s.base_lr;
  j["fine_tune_conv_lr"] = s.fine_tune_conv_lr;
  j["momentum"] = s.momentum;
  j["lr_decay_factor"] = s.lr_decay_factor;
  j["lr_decay_every"] = s.lr_decay_every;
  j["batch_size"] = s.batch_size;
  j["seed"] = s.seed;
  j["stop_at_train_accuracy"] = s.stop_at_train_accuracy;
  return j;
}

TrainingSchedule schedule_from_json(const nlohmann::json& j) {
  TrainingSchedule s;
  s.phase1_epochs = j.value("phase1_epochs", s.phase1_epochs);
  s.phase2_epochs = j.value("phase2_epochs", s.phase2_epochs);
  s.base_lr = j.value("base_lr", s.base_lr);
  s.fine_tune_conv_lr = j.value("fine_tune_conv_lr", s.fine_tune_conv_lr);
  s.momentum = j.value("momentum", s.momentum);
  s.lr_decay_factor = j.value("lr_decay_factor", s.lr_decay_factor);
  s.lr_decay_every = j.value("lr_decay_every", s.lr_decay_every);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.seed = j.value("seed", s.seed);
  s.stop_at_train_accuracy = j.value("stop_at_train_accuracy", s.stop_at_train_accuracy);
  return s;
}

}  // namespace orchard
