#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

namespace accsim {

/// Fully connected network with tanh hidden layers and a linear output.
/// Parameters live in one flat vector (per layer: W column-major, then b) so
/// optimizers, target copies and checkpoints treat them uniformly.
/// Inputs and outputs are batched column-wise: one sample per column.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<int> sizes);

  struct Cache {
    std::vector<Eigen::MatrixXd> activations;  // input, hidden..., output
  };

  [[nodiscard]] int input_size() const { return sizes_.front(); }
  [[nodiscard]] int output_size() const { return sizes_.back(); }
  [[nodiscard]] const std::vector<int>& sizes() const { return sizes_; }
  [[nodiscard]] Eigen::Index num_params() const { return params_.size(); }

  [[nodiscard]] Eigen::VectorXd& params() { return params_; }
  [[nodiscard]] const Eigen::VectorXd& params() const { return params_; }

  /// Glorot-uniform weights, zero biases; the output layer is scaled by
  /// `output_gain`.
  void initialize(std::mt19937_64& rng, double output_gain = 1.0);

  /// Throws std::invalid_argument when input.rows() != input_size().
  [[nodiscard]] Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Cache* cache = nullptr) const;

  /// Gradient of sum_columns <d_output, output> with respect to the flat
  /// parameters, given the cache of the matching forward pass.
  [[nodiscard]] Eigen::VectorXd backward(const Cache& cache, const Eigen::MatrixXd& d_output) const;

  /// Same, but also returns the gradient with respect to the input.
  [[nodiscard]] Eigen::VectorXd backward(const Cache& cache, const Eigen::MatrixXd& d_output,
                                         Eigen::MatrixXd* d_input) const;

 private:
  struct LayerView {
    Eigen::Index weight_offset;
    Eigen::Index bias_offset;
    int in;
    int out;
  };

  std::vector<int> sizes_;
  std::vector<LayerView> layers_;
  Eigen::VectorXd params_;
};

/// Adaptive-moment optimizer over a flat parameter vector.
struct Adam {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  /// Descends along `grad`.
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
};

}  // namespace accsim
