#ifndef CINFER_MLP_HPP
#define CINFER_MLP_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "cinfer/rng.hpp"

namespace cinfer::nn {

using matrix = Eigen::MatrixXd;
using vector = Eigen::VectorXd;

enum class output_activation { identity, tanh };

struct layer {
  matrix weight;  // out x in
  vector bias;
};

using gradients = std::vector<layer>;

/// Fully connected network with ReLU hidden layers. Batches are column-major:
/// one sample per column.
class mlp {
 public:
  struct tape {
    std::vector<matrix> inputs;  // input to each layer
    std::vector<matrix> pre;     // pre-activation of each layer
    matrix output;
  };

  mlp() = default;

  /// Uniform init in +-1/sqrt(fan_in); `final_scale > 0` overrides the bound
  /// of the last layer.
  mlp(std::vector<int> widths, output_activation out, rng_engine& rng, double final_scale = 0)
      : widths_(std::move(widths)), out_(out) {
    if (widths_.size() < 2) throw std::invalid_argument("mlp: need input and output widths");
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      const int in = widths_[l], outw = widths_[l + 1];
      double bound = 1.0 / std::sqrt(static_cast<double>(in));
      if (l + 2 == widths_.size() && final_scale > 0) bound = final_scale;
      std::uniform_real_distribution<double> dist(-bound, bound);
      layer ly{matrix(outw, in), vector(outw)};
      for (Eigen::Index c = 0; c < ly.weight.cols(); ++c)
        for (Eigen::Index r = 0; r < ly.weight.rows(); ++r) ly.weight(r, c) = dist(rng);
      for (Eigen::Index r = 0; r < ly.bias.size(); ++r) ly.bias(r) = dist(rng);
      layers_.push_back(std::move(ly));
    }
  }

  int input_width() const { return widths_.front(); }
  int output_width() const { return widths_.back(); }
  const std::vector<int>& widths() const { return widths_; }
  output_activation activation() const { return out_; }
  std::vector<layer>& layers() { return layers_; }
  const std::vector<layer>& layers() const { return layers_; }

  matrix forward(const matrix& x) const {
    matrix a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      matrix z = layers_[l].weight * a;
      z.colwise() += layers_[l].bias;
      a = is_last(l) ? activate_output(z) : matrix(z.cwiseMax(0.0));
    }
    return a;
  }

  matrix forward(const matrix& x, tape& t) const {
    t.inputs.clear();
    t.pre.clear();
    matrix a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      t.inputs.push_back(a);
      matrix z = layers_[l].weight * a;
      z.colwise() += layers_[l].bias;
      a = is_last(l) ? activate_output(z) : matrix(z.cwiseMax(0.0));
      t.pre.push_back(std::move(z));
    }
    t.output = a;
    return a;
  }

  /// Backpropagates dLoss/dOutput through a recorded forward pass. Optionally
  /// returns dLoss/dInput.
  gradients backward(const tape& t, const matrix& grad_output, matrix* grad_input = nullptr) const {
    gradients g(layers_.size());
    matrix delta = grad_output;
    if (out_ == output_activation::tanh)
      delta = delta.cwiseProduct((1.0 - t.output.array().square()).matrix());
    for (std::size_t l = layers_.size(); l-- > 0;) {
      g[l].weight = delta * t.inputs[l].transpose();
      g[l].bias = delta.rowwise().sum();
      if (l == 0 && grad_input == nullptr) break;
      matrix back = layers_[l].weight.transpose() * delta;
      if (l == 0) {
        *grad_input = std::move(back);
        break;
      }
      delta = back.cwiseProduct((t.pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
    return g;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& ly : layers_) n += static_cast<std::size_t>(ly.weight.size() + ly.bias.size());
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& ly : layers_) {
      out.insert(out.end(), ly.weight.data(), ly.weight.data() + ly.weight.size());
      out.insert(out.end(), ly.bias.data(), ly.bias.data() + ly.bias.size());
    }
    return out;
  }

  void unflatten(std::span<const double> params) {
    if (params.size() != parameter_count()) throw std::invalid_argument("mlp: parameter count");
    std::size_t at = 0;
    for (auto& ly : layers_) {
      std::copy_n(params.data() + at, ly.weight.size(), ly.weight.data());
      at += static_cast<std::size_t>(ly.weight.size());
      std::copy_n(params.data() + at, ly.bias.size(), ly.bias.data());
      at += static_cast<std::size_t>(ly.bias.size());
    }
  }

  bool all_finite() const {
    for (const auto& ly : layers_)
      if (!ly.weight.allFinite() || !ly.bias.allFinite()) return false;
    return true;
  }

  bool same_shape(const mlp& other) const { return widths_ == other.widths_; }

 private:
  bool is_last(std::size_t l) const { return l + 1 == layers_.size(); }

  matrix activate_output(const matrix& z) const {
    return out_ == output_activation::tanh ? matrix(z.array().tanh()) : z;
  }

  std::vector<int> widths_;
  output_activation out_ = output_activation::identity;
  std::vector<layer> layers_;
};

inline gradients zero_like(const mlp& net) {
  gradients g;
  for (const auto& ly : net.layers())
    g.push_back({matrix::Zero(ly.weight.rows(), ly.weight.cols()), vector::Zero(ly.bias.size())});
  return g;
}

inline bool all_finite(const gradients& g) {
  for (const auto& ly : g)
    if (!ly.weight.allFinite() || !ly.bias.allFinite()) return false;
  return true;
}

/// Adam with bias correction.
struct adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  gradients m;
  gradients v;

  adam() = default;
  adam(const mlp& net, double b1, double b2, double e)
      : beta1(b1), beta2(b2), eps(e), m(zero_like(net)), v(zero_like(net)) {}

  void step(mlp& net, const gradients& g, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    auto& layers = net.layers();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      update(layers[l].weight, m[l].weight, v[l].weight, g[l].weight, lr, c1, c2);
      update(layers[l].bias, m[l].bias, v[l].bias, g[l].bias, lr, c1, c2);
    }
  }

 private:
  template <class P, class G>
  void update(P& param, P& mom, P& var, const G& grad, double lr, double c1, double c2) {
    mom = beta1 * mom + (1.0 - beta1) * grad;
    var = beta2 * var + (1.0 - beta2) * grad.cwiseProduct(grad);
    param.array() -= lr * (mom.array() / c1) / ((var.array() / c2).sqrt() + eps);
  }
};

/// target <- delta * online + (1 - delta) * target
inline void soft_update(mlp& target, const mlp& online, double delta) {
  if (!target.same_shape(online)) throw std::invalid_argument("soft_update: shape mismatch");
  auto& tl = target.layers();
  const auto& ol = online.layers();
  for (std::size_t l = 0; l < tl.size(); ++l) {
    tl[l].weight = delta * ol[l].weight + (1.0 - delta) * tl[l].weight;
    tl[l].bias = delta * ol[l].bias + (1.0 - delta) * tl[l].bias;
  }
}

inline double parameter_distance(const mlp& a, const mlp& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("parameter_distance: shape mismatch");
  double sq = 0;
  for (std::size_t l = 0; l < a.layers().size(); ++l) {
    sq += (a.layers()[l].weight - b.layers()[l].weight).squaredNorm();
    sq += (a.layers()[l].bias - b.layers()[l].bias).squaredNorm();
  }
  return std::sqrt(sq);
}

}  // namespace cinfer::nn

#endif  // CINFER_MLP_HPP
