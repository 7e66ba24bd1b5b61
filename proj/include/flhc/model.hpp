#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace flhc {

enum class Architecture { PaperCnn, FastMlp };

struct InputShape {
  int height = 28;
  int width = 28;
  int channels = 1;

  Eigen::Index size() const { return Eigen::Index(height) * width * channels; }
  bool operator==(const InputShape&) const = default;
};

struct ModelSpec {
  Architecture architecture = Architecture::FastMlp;
  InputShape input_shape;
  int num_classes = 10;
  int hidden_units = 64;  // FastMlp only

  /// Throws std::invalid_argument when the spec cannot describe a model.
  void validate() const;
};

struct LayerShape {
  std::string name;
  std::vector<Eigen::Index> dims;

  Eigen::Index size() const;
  bool operator==(const LayerShape&) const = default;
};

using ParameterLayout = std::vector<LayerShape>;

/// All weights of a model as one flat vector. `layout` says which slice
/// belongs to which layer; slices are stored back to back in layout order.
///
/// Dense weights are stored column-major with dims {in, out}. Convolution
/// kernels have dims {k, k, in_channels, out_channels} and are stored as a
/// column-major (k*k*in_channels) x out_channels matrix whose row index is
/// (ky * k + kx) * in_channels + c.
struct ParameterVector {
  Eigen::VectorXd values;
  ParameterLayout layout;

  Eigen::Index size() const { return values.size(); }
};

struct LayerTensor {
  LayerShape shape;
  Eigen::VectorXd values;
};

ParameterLayout parameter_layout(const ModelSpec& spec);
Eigen::Index parameter_count(const ModelSpec& spec);

std::vector<LayerTensor> unflatten(const ParameterVector& params);
ParameterVector flatten(std::span<const LayerTensor> layers);

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases.
ParameterVector init_parameters(const ModelSpec& spec, std::uint64_t seed);

/// Inputs are one example per column (input_shape.size() rows); pixel
/// (y, x, c) of an example sits at row (y * width + x) * channels + c.
using InputBatch = Eigen::Ref<const Eigen::MatrixXd>;

struct LossGradient {
  double loss = 0.0;
  ParameterVector grad;
};

/// Mean softmax cross-entropy over the batch and its gradient.
LossGradient loss_and_gradient(const ModelSpec& spec, const ParameterVector& params,
                               const InputBatch& inputs, std::span<const int> labels);

/// Same as above, writing the gradient into `grad` (resized if needed).
double loss_and_gradient(const ModelSpec& spec, const Eigen::VectorXd& params,
                         const InputBatch& inputs, std::span<const int> labels,
                         Eigen::VectorXd& grad);

double loss(const ModelSpec& spec, const ParameterVector& params, const InputBatch& inputs,
            std::span<const int> labels);

/// Pre-softmax class scores, one column per example.
Eigen::MatrixXd class_scores(const ModelSpec& spec, const ParameterVector& params,
                             const InputBatch& inputs);

/// Argmax of the class scores; ties go to the lowest class index.
int predict(const ModelSpec& spec, const ParameterVector& params,
            const Eigen::Ref<const Eigen::VectorXd>& example);

std::vector<int> predict_batch(const ModelSpec& spec, const ParameterVector& params,
                               const InputBatch& inputs);

}  // namespace flhc
