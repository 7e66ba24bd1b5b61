#include "flhc/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "flhc/rng.hpp"

namespace flhc {

namespace {

using Eigen::Index;
using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using ConstMatrixMap = Map<const MatrixXd>;
using ConstVectorMap = Map<const VectorXd>;
using MatrixMap = Map<MatrixXd>;
using VectorMap = Map<VectorXd>;

constexpr int kKernel = 5;
constexpr int kPad = kKernel / 2;
constexpr int kConv1Channels = 32;
constexpr int kConv2Channels = 64;
constexpr int kCnnDenseUnits = 512;

Index offset_of(const ParameterLayout& layout, std::size_t layer) {
  Index off = 0;
  for (std::size_t i = 0; i < layer; ++i) off += layout[i].size();
  return off;
}

// Layer slices of a flat parameter (or gradient) buffer, in layout order.
template <typename Scalar>
struct Slices {
  std::vector<Scalar*> ptr;
  std::vector<LayerShape> shapes;

  Slices(Scalar* base, const ParameterLayout& layout) : shapes(layout) {
    Index off = 0;
    for (const auto& l : layout) {
      ptr.push_back(base + off);
      off += l.size();
    }
  }

  // Weight slice as a rows x cols column-major matrix.
  auto matrix(std::size_t i) const {
    const auto& d = shapes[i].dims;
    Index cols = d.back();
    Index rows = shapes[i].size() / cols;
    return Map<std::conditional_t<std::is_const_v<Scalar>, const MatrixXd, MatrixXd>>(ptr[i], rows,
                                                                                       cols);
  }
  auto vector(std::size_t i) const {
    return Map<std::conditional_t<std::is_const_v<Scalar>, const VectorXd, VectorXd>>(
        ptr[i], shapes[i].size());
  }
};

void check_inputs(const ModelSpec& spec, const VectorXd& params, const InputBatch& inputs,
                  std::span<const int> labels, bool need_labels) {
  if (params.size() != parameter_count(spec))
    throw std::invalid_argument("parameter vector length does not match the model spec");
  if (inputs.cols() == 0) throw std::invalid_argument("empty batch");
  if (inputs.rows() != spec.input_shape.size())
    throw std::invalid_argument("example size " + std::to_string(inputs.rows()) +
                                " does not match input shape size " +
                                std::to_string(spec.input_shape.size()));
  if (!need_labels) return;
  if (static_cast<Index>(labels.size()) != inputs.cols())
    throw std::invalid_argument("label count does not match batch size");
  for (int y : labels)
    if (y < 0 || y >= spec.num_classes) throw std::invalid_argument("label out of range");
}

void relu_inplace(MatrixXd& m) { m = m.cwiseMax(0.0); }

// Mean cross-entropy of max-shifted softmax. When `dlogits` is given it
// receives d(mean loss)/d(logits).
double softmax_cross_entropy(const MatrixXd& logits, std::span<const int> labels,
                             MatrixXd* dlogits) {
  const Index n = logits.cols();
  double total = 0.0;
  if (dlogits) dlogits->resize(logits.rows(), n);
  for (Index j = 0; j < n; ++j) {
    auto z = logits.col(j);
    const double m = z.maxCoeff();
    const double lse = m + std::log((z.array() - m).exp().sum());
    total += lse - z(labels[j]);
    if (dlogits) {
      dlogits->col(j) = (z.array() - lse).exp().matrix();
      (*dlogits)(labels[j], j) -= 1.0;
    }
  }
  if (dlogits) *dlogits /= double(n);
  return total / double(n);
}

// ---------------------------------------------------------------- MLP

struct MlpForward {
  MatrixXd hidden;  // post-ReLU, hidden x n
  MatrixXd logits;
};

template <typename S>
MlpForward mlp_forward(const Slices<S>& p, const InputBatch& x) {
  MlpForward f;
  f.hidden = p.matrix(0).transpose() * x;
  f.hidden.colwise() += p.vector(1);
  relu_inplace(f.hidden);
  f.logits = p.matrix(2).transpose() * f.hidden;
  f.logits.colwise() += p.vector(3);
  return f;
}

double mlp_loss_grad(const Slices<const double>& p, const InputBatch& x,
                     std::span<const int> labels, const Slices<double>& g) {
  MlpForward f = mlp_forward(p, x);
  MatrixXd dz;
  const double l = softmax_cross_entropy(f.logits, labels, &dz);

  g.matrix(2).noalias() = f.hidden * dz.transpose();
  g.vector(3) = dz.rowwise().sum();
  MatrixXd dh = p.matrix(2) * dz;
  dh.array() *= (f.hidden.array() > 0.0).cast<double>();
  g.matrix(0).noalias() = x * dh.transpose();
  g.vector(1) = dh.rowwise().sum();
  return l;
}

// ---------------------------------------------------------------- CNN
//
// Activations of one example are (height*width) x channels matrices.

MatrixXd im2col(const MatrixXd& act, int h, int w) {
  const Index c_in = act.cols();
  MatrixXd cols = MatrixXd::Zero(Index(h) * w, kKernel * kKernel * c_in);
  for (int ky = 0; ky < kKernel; ++ky)
    for (int kx = 0; kx < kKernel; ++kx)
      for (Index c = 0; c < c_in; ++c) {
        const Index col = (ky * kKernel + kx) * c_in + c;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - kPad;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - kPad;
            if (sx < 0 || sx >= w) continue;
            cols(Index(y) * w + x, col) = act(Index(sy) * w + sx, c);
          }
        }
      }
  return cols;
}

// Adjoint of im2col.
MatrixXd col2im(const MatrixXd& dcols, int h, int w, Index c_in) {
  MatrixXd dact = MatrixXd::Zero(Index(h) * w, c_in);
  for (int ky = 0; ky < kKernel; ++ky)
    for (int kx = 0; kx < kKernel; ++kx)
      for (Index c = 0; c < c_in; ++c) {
        const Index col = (ky * kKernel + kx) * c_in + c;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - kPad;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - kPad;
            if (sx < 0 || sx >= w) continue;
            dact(Index(sy) * w + sx, c) += dcols(Index(y) * w + x, col);
          }
        }
      }
  return dact;
}

struct Pooled {
  MatrixXd out;
  Eigen::MatrixXi argmax;  // source row of each pooled value
};

Pooled max_pool2(const MatrixXd& act, int h, int w) {
  const int ph = h / 2, pw = w / 2;
  Pooled p{MatrixXd(Index(ph) * pw, act.cols()), Eigen::MatrixXi(Index(ph) * pw, act.cols())};
  for (Index c = 0; c < act.cols(); ++c)
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) {
        Index best = Index(2 * y) * w + 2 * x;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const Index r = Index(2 * y + dy) * w + 2 * x + dx;
            if (act(r, c) > act(best, c)) best = r;
          }
        p.out(Index(y) * pw + x, c) = act(best, c);
        p.argmax(Index(y) * pw + x, c) = int(best);
      }
  return p;
}

MatrixXd unpool2(const MatrixXd& dout, const Eigen::MatrixXi& argmax, Index rows) {
  MatrixXd din = MatrixXd::Zero(rows, dout.cols());
  for (Index c = 0; c < dout.cols(); ++c)
    for (Index r = 0; r < dout.rows(); ++r) din(argmax(r, c), c) += dout(r, c);
  return din;
}

struct ConvTrace {
  MatrixXd cols1, pre1;  // im2col input and post-ReLU output of conv1
  Eigen::MatrixXi pool1;
  MatrixXd cols2, pre2;
  Eigen::MatrixXi pool2;
};

struct CnnGeometry {
  int h, w, c_in;
  Index flat() const { return Index(h / 4) * (w / 4) * kConv2Channels; }
};

CnnGeometry geometry(const ModelSpec& spec) {
  return {spec.input_shape.height, spec.input_shape.width, spec.input_shape.channels};
}

// Convolution stack of one example; returns the flattened feature vector.
template <typename S>
VectorXd conv_forward(const Slices<S>& p, const CnnGeometry& g, const double* example,
                      ConvTrace* trace) {
  const Index hw = Index(g.h) * g.w;
  MatrixXd a0 =
      Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(example, hw,
                                                                                        g.c_in);
  MatrixXd cols1 = im2col(a0, g.h, g.w);
  MatrixXd o1 = cols1 * p.matrix(0);
  o1.rowwise() += p.vector(1).transpose();
  relu_inplace(o1);
  Pooled p1 = max_pool2(o1, g.h, g.w);

  MatrixXd cols2 = im2col(p1.out, g.h / 2, g.w / 2);
  MatrixXd o2 = cols2 * p.matrix(2);
  o2.rowwise() += p.vector(3).transpose();
  relu_inplace(o2);
  Pooled p2 = max_pool2(o2, g.h / 2, g.w / 2);

  if (trace) {
    trace->cols1 = std::move(cols1);
    trace->pre1 = std::move(o1);
    trace->pool1 = std::move(p1.argmax);
    trace->cols2 = std::move(cols2);
    trace->pre2 = std::move(o2);
    trace->pool2 = std::move(p2.argmax);
  }
  return Map<const VectorXd>(p2.out.data(), p2.out.size());
}

template <typename S>
MatrixXd cnn_features(const Slices<S>& p, const CnnGeometry& g, const InputBatch& x,
                      std::vector<ConvTrace>* traces) {
  MatrixXd feats(g.flat(), x.cols());
  if (traces) traces->resize(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    VectorXd col = x.col(j);
    feats.col(j) = conv_forward(p, g, col.data(), traces ? &(*traces)[j] : nullptr);
  }
  return feats;
}

template <typename S>
MatrixXd cnn_logits(const Slices<S>& p, const MatrixXd& feats, MatrixXd* hidden) {
  MatrixXd h = p.matrix(4).transpose() * feats;
  h.colwise() += p.vector(5);
  relu_inplace(h);
  MatrixXd z = p.matrix(6).transpose() * h;
  z.colwise() += p.vector(7);
  if (hidden) *hidden = std::move(h);
  return z;
}

double cnn_loss_grad(const Slices<const double>& p, const CnnGeometry& geo, const InputBatch& x,
                     std::span<const int> labels, const Slices<double>& g) {
  std::vector<ConvTrace> traces;
  MatrixXd feats = cnn_features(p, geo, x, &traces);
  MatrixXd hidden;
  MatrixXd logits = cnn_logits(p, feats, &hidden);
  MatrixXd dz;
  const double l = softmax_cross_entropy(logits, labels, &dz);

  g.matrix(6).noalias() = hidden * dz.transpose();
  g.vector(7) = dz.rowwise().sum();
  MatrixXd dh = p.matrix(6) * dz;
  dh.array() *= (hidden.array() > 0.0).cast<double>();
  g.matrix(4).noalias() = feats * dh.transpose();
  g.vector(5) = dh.rowwise().sum();
  MatrixXd dfeats = p.matrix(4) * dh;

  g.matrix(0).setZero();
  g.vector(1).setZero();
  g.matrix(2).setZero();
  g.vector(3).setZero();
  const Index hw1 = Index(geo.h) * geo.w;
  const Index hw2 = hw1 / 4;
  const Index hw3 = hw2 / 4;
  for (Index j = 0; j < x.cols(); ++j) {
    const ConvTrace& t = traces[j];
    MatrixXd dpool2 = Map<const MatrixXd>(dfeats.col(j).data(), hw3, kConv2Channels);
    MatrixXd do2 = unpool2(dpool2, t.pool2, hw2);
    do2.array() *= (t.pre2.array() > 0.0).cast<double>();
    g.matrix(2).noalias() += t.cols2.transpose() * do2;
    g.vector(3) += do2.colwise().sum().transpose();

    MatrixXd dcols2 = do2 * p.matrix(2).transpose();
    MatrixXd dpool1 = col2im(dcols2, geo.h / 2, geo.w / 2, kConv1Channels);
    MatrixXd do1 = unpool2(dpool1, t.pool1, hw1);
    do1.array() *= (t.pre1.array() > 0.0).cast<double>();
    g.matrix(0).noalias() += t.cols1.transpose() * do1;
    g.vector(1) += do1.colwise().sum().transpose();
  }
  return l;
}

}  // namespace

void ModelSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("num_classes must be at least 2");
  if (input_shape.height < 1 || input_shape.width < 1 || input_shape.channels < 1)
    throw std::invalid_argument("input shape dimensions must be positive");
  switch (architecture) {
    case Architecture::PaperCnn:
      if (!(input_shape == InputShape{28, 28, 1}))
        throw std::invalid_argument("PaperCnn requires input shape (28, 28, 1)");
      break;
    case Architecture::FastMlp:
      if (hidden_units < 1) throw std::invalid_argument("hidden_units must be positive");
      break;
  }
}

Index LayerShape::size() const {
  return std::accumulate(dims.begin(), dims.end(), Index(1), std::multiplies<>());
}

ParameterLayout parameter_layout(const ModelSpec& spec) {
  spec.validate();
  const Index in = spec.input_shape.size();
  const Index classes = spec.num_classes;
  if (spec.architecture == Architecture::FastMlp) {
    const Index hidden = spec.hidden_units;
    return {{"dense1.weight", {in, hidden}},
            {"dense1.bias", {hidden}},
            {"dense2.weight", {hidden, classes}},
            {"dense2.bias", {classes}}};
  }
  const CnnGeometry g = geometry(spec);
  return {{"conv1.weight", {kKernel, kKernel, g.c_in, kConv1Channels}},
          {"conv1.bias", {kConv1Channels}},
          {"conv2.weight", {kKernel, kKernel, kConv1Channels, kConv2Channels}},
          {"conv2.bias", {kConv2Channels}},
          {"dense1.weight", {g.flat(), kCnnDenseUnits}},
          {"dense1.bias", {kCnnDenseUnits}},
          {"dense2.weight", {kCnnDenseUnits, classes}},
          {"dense2.bias", {classes}}};
}

Index parameter_count(const ModelSpec& spec) {
  Index n = 0;
  for (const auto& l : parameter_layout(spec)) n += l.size();
  return n;
}

std::vector<LayerTensor> unflatten(const ParameterVector& params) {
  std::vector<LayerTensor> out;
  Index off = 0;
  for (const auto& l : params.layout) {
    if (off + l.size() > params.values.size())
      throw std::invalid_argument("layout is longer than the parameter vector");
    out.push_back({l, params.values.segment(off, l.size())});
    off += l.size();
  }
  if (off != params.values.size())
    throw std::invalid_argument("layout is shorter than the parameter vector");
  return out;
}

ParameterVector flatten(std::span<const LayerTensor> layers) {
  ParameterVector p;
  Index total = 0;
  for (const auto& l : layers) {
    if (l.values.size() != l.shape.size())
      throw std::invalid_argument("layer '" + l.shape.name + "' has the wrong number of values");
    total += l.values.size();
  }
  p.values.resize(total);
  Index off = 0;
  for (const auto& l : layers) {
    p.values.segment(off, l.values.size()) = l.values;
    off += l.values.size();
    p.layout.push_back(l.shape);
  }
  return p;
}

ParameterVector init_parameters(const ModelSpec& spec, std::uint64_t seed) {
  ParameterVector p;
  p.layout = parameter_layout(spec);
  p.values = VectorXd::Zero(offset_of(p.layout, p.layout.size()));
  Rng rng = make_rng(seed);
  Index off = 0;
  for (const auto& l : p.layout) {
    if (l.dims.size() > 1) {
      const Index fan_in = l.size() / l.dims.back();
      const double bound = 1.0 / std::sqrt(double(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Index i = 0; i < l.size(); ++i) p.values[off + i] = dist(rng);
    }
    off += l.size();
  }
  return p;
}

double loss_and_gradient(const ModelSpec& spec, const VectorXd& params, const InputBatch& inputs,
                         std::span<const int> labels, VectorXd& grad) {
  check_inputs(spec, params, inputs, labels, true);
  const ParameterLayout layout = parameter_layout(spec);
  grad.resize(params.size());
  Slices<const double> p(params.data(), layout);
  Slices<double> g(grad.data(), layout);
  if (spec.architecture == Architecture::FastMlp) return mlp_loss_grad(p, inputs, labels, g);
  return cnn_loss_grad(p, geometry(spec), inputs, labels, g);
}

LossGradient loss_and_gradient(const ModelSpec& spec, const ParameterVector& params,
                               const InputBatch& inputs, std::span<const int> labels) {
  LossGradient out;
  out.grad.layout = params.layout;
  out.loss = loss_and_gradient(spec, params.values, inputs, labels, out.grad.values);
  return out;
}

MatrixXd class_scores(const ModelSpec& spec, const ParameterVector& params,
                      const InputBatch& inputs) {
  check_inputs(spec, params.values, inputs, {}, false);
  const ParameterLayout layout = parameter_layout(spec);
  Slices<const double> p(params.values.data(), layout);
  if (spec.architecture == Architecture::FastMlp) return mlp_forward(p, inputs).logits;
  return cnn_logits(p, cnn_features(p, geometry(spec), inputs, nullptr), nullptr);
}

double loss(const ModelSpec& spec, const ParameterVector& params, const InputBatch& inputs,
            std::span<const int> labels) {
  check_inputs(spec, params.values, inputs, labels, true);
  return softmax_cross_entropy(class_scores(spec, params, inputs), labels, nullptr);
}

std::vector<int> predict_batch(const ModelSpec& spec, const ParameterVector& params,
                               const InputBatch& inputs) {
  const MatrixXd scores = class_scores(spec, params, inputs);
  std::vector<int> out(scores.cols());
  for (Index j = 0; j < scores.cols(); ++j) {
    Index best = 0;
    for (Index c = 1; c < scores.rows(); ++c)
      if (scores(c, j) > scores(best, j)) best = c;
    out[j] = int(best);
  }
  return out;
}

int predict(const ModelSpec& spec, const ParameterVector& params,
            const Eigen::Ref<const VectorXd>& example) {
  return predict_batch(spec, params, example)[0];
}

}  // namespace flhc
