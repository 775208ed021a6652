#include "accsim/mlp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace accsim {

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("Mlp needs at least input and output sizes");
  Eigen::Index offset = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    if (in <= 0 || out <= 0) throw std::invalid_argument("Mlp layer sizes must be positive");
    LayerView view{offset, offset + static_cast<Eigen::Index>(in) * out, in, out};
    layers_.push_back(view);
    offset = view.bias_offset + out;
  }
  params_ = Eigen::VectorXd::Zero(offset);
}

void Mlp::initialize(std::mt19937_64& rng, double output_gain) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const double limit = std::sqrt(6.0 / (L.in + L.out)) * (l + 1 == layers_.size() ? output_gain : 1.0);
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(L.in) * L.out; ++i) {
      params_[L.weight_offset + i] = dist(rng);
    }
    params_.segment(L.bias_offset, L.out).setZero();
  }
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& input, Cache* cache) const {
  if (input.rows() != input_size()) {
    throw std::invalid_argument("Mlp::forward: expected " + std::to_string(input_size()) +
                                " input rows, got " + std::to_string(input.rows()));
  }
  if (cache != nullptr) {
    cache->activations.clear();
    cache->activations.push_back(input);
  }
  Eigen::MatrixXd a = input;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    Eigen::Map<const Eigen::MatrixXd> W(params_.data() + L.weight_offset, L.out, L.in);
    Eigen::Map<const Eigen::VectorXd> b(params_.data() + L.bias_offset, L.out);
    Eigen::MatrixXd z = W * a;
    z.colwise() += b;
    // tanh via exp, which Eigen vectorizes for double; saturates cleanly.
    if (l + 1 < layers_.size()) z = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
    a = std::move(z);
    if (cache != nullptr) cache->activations.push_back(a);
  }
  return a;
}

Eigen::VectorXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& d_output) const {
  return backward(cache, d_output, nullptr);
}

Eigen::VectorXd Mlp::backward(const Cache& cache, const Eigen::MatrixXd& d_output,
                              Eigen::MatrixXd* d_input) const {
  if (cache.activations.size() != layers_.size() + 1) {
    throw std::invalid_argument("Mlp::backward: cache does not match network");
  }
  if (d_output.rows() != output_size() || d_output.cols() != cache.activations.back().cols()) {
    throw std::invalid_argument("Mlp::backward: output gradient shape mismatch");
  }
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
  Eigen::MatrixXd delta = d_output;  // dL/dz for the current layer
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& L = layers_[k];
    const Eigen::MatrixXd& a_in = cache.activations[k];
    Eigen::Map<Eigen::MatrixXd> gW(grad.data() + L.weight_offset, L.out, L.in);
    gW.noalias() = delta * a_in.transpose();
    grad.segment(L.bias_offset, L.out) = delta.rowwise().sum();
    if (k == 0 && d_input == nullptr) break;
    Eigen::Map<const Eigen::MatrixXd> W(params_.data() + L.weight_offset, L.out, L.in);
    Eigen::MatrixXd d_a = W.transpose() * delta;
    if (k == 0) {
      *d_input = std::move(d_a);
      break;
    }
    // a_in = tanh(z_in): dz = da * (1 - a^2)
    delta = d_a.array() * (1.0 - a_in.array().square());
  }
  return grad;
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (m.size() != params.size()) {
    m = Eigen::VectorXd::Zero(params.size());
    v = Eigen::VectorXd::Zero(params.size());
    t = 0;
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

}  // namespace accsim
