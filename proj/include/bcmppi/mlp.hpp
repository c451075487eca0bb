// Fully connected regressor: tanh hidden layers, linear scalar output,
// mean-squared-error loss with explicit backpropagation.
#pragma once

#include "bcmppi/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace bcmppi {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out

  bool operator==(const DenseLayer& o) const { return weight == o.weight && bias == o.bias; }
};

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) { check_shapes(); }

  /// Glorot-uniform weights, zero biases. `sizes` = {in, hidden..., 1}.
  static Mlp glorot(const std::vector<int>& sizes, const RandomStream& stream) {
    if (sizes.size() < 2 || sizes.back() != 1) {
      throw std::invalid_argument("mlp: layer sizes must end with a scalar output");
    }
    auto rng = stream.engine();
    std::vector<DenseLayer> layers;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const int in = sizes[l];
      const int out = sizes[l + 1];
      const double limit = std::sqrt(6.0 / (in + out));
      DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
      for (int c = 0; c < in; ++c) {
        for (int r = 0; r < out; ++r) layer.weight(r, c) = uniform(rng, -limit, limit);
      }
      layers.push_back(std::move(layer));
    }
    return Mlp(std::move(layers));
  }

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& mutable_layers() { return layers_; }
  int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }

  /// Single-sample forward pass (matrix-vector products only, so the result does not
  /// depend on how callers batch their queries).
  double forward(const Eigen::VectorXd& x) const {
    Eigen::VectorXd h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::VectorXd z = layers_[l].weight * h + layers_[l].bias;
      h = is_hidden(l) ? Eigen::VectorXd(z.array().tanh()) : z;
    }
    return h(0);
  }

  /// Batch forward pass; columns of `x` are samples.
  Eigen::RowVectorXd forward_batch(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      Eigen::MatrixXd z = layers_[l].weight * h;
      z.colwise() += layers_[l].bias;
      h = is_hidden(l) ? Eigen::MatrixXd(z.array().tanh()) : z;
    }
    return h.row(0);
  }

  /// Mean squared error over the batch and its gradient with respect to every parameter.
  double loss_and_gradients(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y,
                            MlpGradients& grads) const {
    const std::size_t n_layers = layers_.size();
    const double batch = static_cast<double>(x.cols());
    std::vector<Eigen::MatrixXd> activations(n_layers + 1);
    activations[0] = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
      Eigen::MatrixXd z = layers_[l].weight * activations[l];
      z.colwise() += layers_[l].bias;
      activations[l + 1] = is_hidden(l) ? Eigen::MatrixXd(z.array().tanh()) : z;
    }
    const Eigen::RowVectorXd residual = activations[n_layers].row(0) - y;
    const double loss = residual.squaredNorm() / batch;

    grads.weight.resize(n_layers);
    grads.bias.resize(n_layers);
    Eigen::MatrixXd delta = (2.0 / batch) * residual;  // dL/dz at the output layer
    for (std::size_t l = n_layers; l-- > 0;) {
      grads.weight[l] = delta * activations[l].transpose();
      grads.bias[l] = delta.rowwise().sum();
      if (l > 0) {
        Eigen::MatrixXd back = layers_[l].weight.transpose() * delta;
        // tanh'(z) = 1 - tanh(z)^2, and activations[l] holds tanh(z) of layer l - 1
        delta = back.array() * (1.0 - activations[l].array().square());
      }
    }
    return loss;
  }

  bool operator==(const Mlp& o) const { return layers_ == o.layers_; }

 private:
  bool is_hidden(std::size_t l) const { return l + 1 < layers_.size(); }

  void check_shapes() const {
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (layers_[l].bias.size() != layers_[l].weight.rows()) {
        throw std::invalid_argument("mlp: bias length does not match layer width");
      }
      if (l > 0 && layers_[l].weight.cols() != layers_[l - 1].weight.rows()) {
        throw std::invalid_argument("mlp: consecutive layer shapes do not chain");
      }
    }
    if (!layers_.empty() && layers_.back().weight.rows() != 1) {
      throw std::invalid_argument("mlp: output layer must be scalar");
    }
  }

  std::vector<DenseLayer> layers_;
};

}  // namespace bcmppi
