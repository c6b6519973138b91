#include "ldaprune/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <random>
#include <tuple>

#include "ldaprune/error.hpp"

namespace ldaprune {

Gradients Gradients::zeros_like(const ModelDescriptor& model) {
  Gradients g;
  g.layers.reserve(model.layers.size());
  for (const Layer& layer : model.layers) {
    ParamGrad pg;
    if (layer.spec.has_params()) {
      pg.weight = Tensor(layer.weight.shape());
      pg.bias = Tensor(layer.bias.shape());
    }
    g.layers.push_back(std::move(pg));
  }
  return g;
}

void Gradients::accumulate(const Gradients& other) {
  require(other.layers.size() == layers.size(), ErrorKind::Dimension,
          "gradient layer counts differ");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (auto [dst, src] : {std::pair{&layers[i].weight, &other.layers[i].weight},
                            std::pair{&layers[i].bias, &other.layers[i].bias}}) {
      require(dst->shape() == src->shape(), ErrorKind::Dimension, "gradient shapes differ");
      for (std::size_t n = 0; n < dst->size(); ++n) (*dst)[n] += (*src)[n];
    }
  }
}

void Gradients::scale(float factor) {
  for (ParamGrad& pg : layers) {
    for (float& v : pg.weight.data()) v *= factor;
    for (float& v : pg.bias.data()) v *= factor;
  }
}

TrainConfig TrainConfig::retrain(int retrain_epochs) const {
  TrainConfig c = *this;
  c.learning_rate = learning_rate * 0.1;
  c.epochs = retrain_epochs;
  return c;
}

void TrainLog::write_csv(std::ostream& os) const {
  os << "epoch,loss,train_acc,eval_acc\n";
  char buf[128];
  for (const EpochLog& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f\n", e.epoch, e.loss, e.train_acc,
                  e.eval_acc);
    os << buf;
  }
}

double cross_entropy_loss(std::span<const float> probs, int label) {
  require(label >= 0 && static_cast<std::size_t>(label) < probs.size(),
          ErrorKind::InvalidArgument,
          "label " + std::to_string(label) + " outside [0," + std::to_string(probs.size()) + ")");
  return -std::log(std::max(static_cast<double>(probs[label]), 1e-12));
}

Gradients backward_pass(const ModelDescriptor& model, const ForwardRecord& record, int label) {
  require(record.outputs.size() == model.layers.size(), ErrorKind::Dimension,
          "forward record has " + std::to_string(record.outputs.size()) + " layers, model has " +
              std::to_string(model.layers.size()));
  require(label >= 0 && static_cast<std::size_t>(label) < record.probs.size(),
          ErrorKind::InvalidArgument, "label out of range");

  Gradients grads = Gradients::zeros_like(model);
  std::size_t top = model.layers.size();
  if (model.layers.back().spec.kind == LayerKind::Softmax) --top;

  // Softmax + cross-entropy: d loss / d logits = p - onehot.
  std::vector<float> dlogits = record.probs;
  dlogits[static_cast<std::size_t>(label)] -= 1.0f;
  const Shape& logit_shape = top > 0 ? record.outputs[top - 1].shape() : record.input.shape();
  Tensor grad(logit_shape, std::move(dlogits));

  for (std::size_t i = top; i-- > 0;) {
    const Layer& layer = model.layers[i];
    const Tensor& input = i == 0 ? record.input : record.outputs[i - 1];
    const Tensor& output = record.outputs[i];
    require(output.shape() == grad.shape(), ErrorKind::Dimension,
            "record does not match model at layer " + std::to_string(i));
    switch (layer.spec.kind) {
      case LayerKind::Dense: {
        const int out_dim = layer.spec.dense.out_dim, in_dim = layer.spec.dense.in_dim;
        Tensor& dw = grads.layers[i].weight;
        for (int r = 0; r < out_dim; ++r) {
          const float g = grad[r];
          grads.layers[i].bias[r] = g;
          float* row = dw.data().data() + static_cast<std::size_t>(r) * in_dim;
          for (int c = 0; c < in_dim; ++c) row[c] = g * input[c];
        }
        if (i > 0) {
          Tensor gin(input.shape());
          for (int c = 0; c < in_dim; ++c) {
            double sum = 0.0;
            for (int r = 0; r < out_dim; ++r)
              sum += static_cast<double>(layer.weight[static_cast<std::size_t>(r) * in_dim + c]) *
                     grad[r];
            gin[c] = static_cast<float>(sum);
          }
          grad = std::move(gin);
        }
        break;
      }
      case LayerKind::Conv: {
        const ConvParams& cp = layer.spec.conv;
        grads.layers[i].weight =
            conv2d_weight_grad(input, grad, layer.weight.shape(), cp.stride, cp.pad);
        const std::size_t plane = grad.size() / static_cast<std::size_t>(cp.out_channels);
        for (int o = 0; o < cp.out_channels; ++o) {
          double sum = 0.0;
          for (std::size_t n = 0; n < plane; ++n) sum += grad[o * plane + n];
          grads.layers[i].bias[o] = static_cast<float>(sum);
        }
        if (i > 0) grad = transposed_conv(grad, layer.weight, cp.stride, cp.pad, input.shape());
        break;
      }
      case LayerKind::Relu:
        for (std::size_t n = 0; n < grad.size(); ++n)
          if (!(output[n] > 0.0f)) grad[n] = 0.0f;
        break;
      case LayerKind::MaxPool: {
        const auto& sw = record.switches[i];
        require(sw.has_value() && sw->argmax.size() == grad.size(), ErrorKind::Dimension,
                "missing pool switches at layer " + std::to_string(i));
        Tensor gin(input.shape());
        for (std::size_t n = 0; n < grad.size(); ++n)
          gin[static_cast<std::size_t>(sw->argmax[n])] += grad[n];
        grad = std::move(gin);
        break;
      }
      case LayerKind::Flatten:
        grad = grad.reshaped(input.shape());
        break;
      case LayerKind::Softmax:
        fail(ErrorKind::Config, "softmax is only supported as the final layer");
    }
  }
  return grads;
}

void sgd_step(ModelDescriptor& model, const Gradients& grads, Gradients& velocity,
              const TrainConfig& config, const WeightMask* mask) {
  require(grads.layers.size() == model.layers.size() &&
              velocity.layers.size() == model.layers.size(),
          ErrorKind::Dimension, "gradient/velocity layer count mismatch");
  const float lr = static_cast<float>(config.learning_rate);
  const float momentum = static_cast<float>(config.momentum);
  const float wd = static_cast<float>(config.weight_decay);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    Layer& layer = model.layers[i];
    if (!layer.spec.has_params()) continue;
    const Tensor* m = mask && i < mask->weight.size() && !mask->weight[i].empty()
                          ? &mask->weight[i]
                          : nullptr;
    for (auto [w, g, v, wm] :
         {std::tuple{&layer.weight, &grads.layers[i].weight, &velocity.layers[i].weight, m},
          std::tuple{&layer.bias, &grads.layers[i].bias, &velocity.layers[i].bias,
                     static_cast<const Tensor*>(nullptr)}}) {
      require(w->shape() == g->shape() && w->shape() == v->shape(), ErrorKind::Dimension,
              "gradient shape mismatch at layer " + std::to_string(i));
      for (std::size_t n = 0; n < w->size(); ++n) {
        (*v)[n] = momentum * (*v)[n] - lr * ((*g)[n] + wd * (*w)[n]);
        (*w)[n] += (*v)[n];
        if (wm && (*wm)[n] == 0.0f) {
          (*w)[n] = 0.0f;
          (*v)[n] = 0.0f;
        }
      }
    }
  }
}

double model_accuracy(const ModelDescriptor& model, std::span<const LabeledImage> data,
                      const ChannelMask* channel_mask) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const LabeledImage& item : data)
    if (predict_label(forward_pass(model, item.image, channel_mask)) == item.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainLog train(ModelDescriptor& model, std::span<const LabeledImage> data,
               const TrainConfig& config, std::span<const LabeledImage> eval,
               const WeightMask* mask) {
  require(!data.empty(), ErrorKind::InvalidArgument, "training set is empty");
  require(config.learning_rate >= 0.0, ErrorKind::InvalidArgument, "learning rate must be >= 0");
  require(config.batch_size >= 1, ErrorKind::InvalidArgument, "batch size must be >= 1");
  for (const LabeledImage& item : data)
    require(item.label == 0 || item.label == 1, ErrorKind::InvalidArgument,
            "labels must be 0 or 1, got " + std::to_string(item.label));

  TrainLog log;
  Gradients velocity = Gradients::zeros_like(model);
  std::vector<std::size_t> order(data.size());
  std::mt19937_64 rng(config.seed);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t n = order.size(); n > 1; --n) {
      const std::size_t j = static_cast<std::size_t>(rng() % n);
      std::swap(order[n - 1], order[j]);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      Gradients batch = Gradients::zeros_like(model);
      for (std::size_t b = start; b < stop; ++b) {
        const LabeledImage& item = data[order[b]];
        const ForwardRecord record = forward_pass(model, item.image);
        const double loss = cross_entropy_loss(record.probs, item.label);
        if (!std::isfinite(loss))
          fail(ErrorKind::Numeric, "non-finite loss at epoch " + std::to_string(epoch) +
                                       ", sample " + item.id);
        loss_sum += loss;
        if (predict_label(record) == item.label) ++correct;
        batch.accumulate(backward_pass(model, record, item.label));
      }
      batch.scale(1.0f / static_cast<float>(stop - start));
      sgd_step(model, batch, velocity, config, mask);
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(data.size());
    if (std::isnan(entry.loss))
      fail(ErrorKind::Numeric, "training loss became NaN at epoch " + std::to_string(epoch));
    entry.train_acc = static_cast<double>(correct) / static_cast<double>(data.size());
    if (!eval.empty()) entry.eval_acc = model_accuracy(model, eval);
    log.epochs.push_back(entry);
  }
  return log;
}

}  // namespace ldaprune
