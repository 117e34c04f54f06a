#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "isep/matrix.hpp"
#include "isep/rng.hpp"

namespace isep {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

enum class Activation { Relu, Mish, Tanh };

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double mish(double x) { return x * std::tanh(softplus(x)); }

inline double mish_grad(double x) {
  const double t = std::tanh(softplus(x));
  return t + x * (1.0 - t * t) * sigmoid(x);
}

inline double activate(Activation act, double z) {
  switch (act) {
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Mish: return mish(z);
    case Activation::Tanh: return std::tanh(z);
  }
  return z;
}

inline double activate_grad(Activation act, double z) {
  switch (act) {
    case Activation::Relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Mish: return mish_grad(z);
    case Activation::Tanh: {
      const double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

/// Parameter gradients (or any other per-parameter quantity) with the same
/// shapes as the network they belong to.
struct MlpGrads {
  std::vector<Matrix2D> weights;
  std::vector<std::vector<double>> biases;

  void zero() {
    for (auto& w : weights) w.fill(0.0);
    for (auto& b : biases) b.assign(b.size(), 0.0);
  }
};

struct AdamState {
  MlpGrads m;
  MlpGrads v;
  std::int64_t step = 0;
};

/// Fully connected network: hidden layers share one activation, the output
/// layer is linear. Weights are stored (out, in) so the forward pass is a
/// row-by-row dot product.
struct MlpParams {
  std::vector<std::size_t> layer_sizes;  // [in, h1, ..., out]
  std::vector<Matrix2D> weights;         // weights[l] is (sizes[l+1], sizes[l])
  std::vector<std::vector<double>> biases;
  Activation activation = Activation::Relu;
  AdamState adam;

  std::size_t in_dim() const { return layer_sizes.front(); }
  std::size_t out_dim() const { return layer_sizes.back(); }
  std::size_t n_layers() const { return weights.size(); }
};

inline MlpGrads make_grads(const MlpParams& net) {
  MlpGrads g;
  g.weights.reserve(net.n_layers());
  g.biases.reserve(net.n_layers());
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    g.weights.emplace_back(net.weights[l].rows, net.weights[l].cols);
    g.biases.emplace_back(net.biases[l].size(), 0.0);
  }
  return g;
}

/// Glorot-uniform weights, zero biases. `zero_final` zeroes the output layer,
/// used for velocity networks so the initial field is identically zero.
inline MlpParams make_mlp(std::vector<std::size_t> layer_sizes, Activation activation,
                          SplitMix64& rng, bool zero_final = false) {
  if (layer_sizes.size() < 2) throw std::invalid_argument("mlp needs at least two layer sizes");
  MlpParams net;
  net.layer_sizes = std::move(layer_sizes);
  net.activation = activation;
  const std::size_t n_layers = net.layer_sizes.size() - 1;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::size_t fan_in = net.layer_sizes[l];
    const std::size_t fan_out = net.layer_sizes[l + 1];
    Matrix2D w(fan_out, fan_in);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    const bool zero = zero_final && l + 1 == n_layers;
    for (double& x : w.data) x = zero ? 0.0 : rng.uniform(-limit, limit);
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(fan_out, 0.0);
  }
  net.adam.m = make_grads(net);
  net.adam.v = make_grads(net);
  return net;
}

/// Intermediate values of one forward pass, kept for the backward pass.
/// pre[l] holds pre-activations of layer l; post[l] the activated outputs of
/// hidden layers. The network output is pre.back() (linear output layer).
struct ForwardTape {
  Matrix2D input;
  std::vector<Matrix2D> pre;
  std::vector<Matrix2D> post;

  const Matrix2D& output() const { return pre.back(); }
};

inline void mlp_forward(const MlpParams& net, const Matrix2D& input, ForwardTape& tape) {
  if (input.cols != net.in_dim())
    throw std::invalid_argument("mlp_forward: input has " + std::to_string(input.cols) +
                                " columns, network expects " + std::to_string(net.in_dim()));
  const std::size_t n_layers = net.n_layers();
  tape.input = input;
  tape.pre.resize(n_layers);
  tape.post.resize(n_layers - 1);
  const Matrix2D* cur = &tape.input;
  for (std::size_t l = 0; l < n_layers; ++l) {
    Matrix2D& z = tape.pre[l];
    matmul_nt(*cur, net.weights[l], z);
    const double* b = net.biases[l].data();
    // guard accumulates x*0, which is 0 for finite x and NaN otherwise, so one
    // vectorized pass detects NaN/Inf even where ReLU would mask it.
    double guard = 0.0;
    for (std::size_t i = 0; i < z.rows; ++i) {
      double* zr = z.row(i);
#pragma omp simd reduction(+ : guard)
      for (std::size_t j = 0; j < z.cols; ++j) {
        zr[j] += b[j];
        guard += zr[j] * 0.0;
      }
    }
    if (!std::isfinite(guard))
      throw NonFiniteError("non-finite pre-activation in layer " + std::to_string(l));
    if (l + 1 < n_layers) {
      Matrix2D& a = tape.post[l];
      a.resize(z.rows, z.cols);
      for (std::size_t i = 0; i < z.size(); ++i)
        a.data[i] = activate(net.activation, z.data[i]);
      cur = &a;
    }
  }
}

inline Matrix2D mlp_apply(const MlpParams& net, const Matrix2D& input) {
  ForwardTape tape;
  mlp_forward(net, input, tape);
  return tape.output();
}

inline std::vector<double> mlp_apply_vec(const MlpParams& net, const std::vector<double>& x) {
  Matrix2D input(1, x.size());
  input.data = x;
  const Matrix2D out = mlp_apply(net, input);
  return out.data;
}

/// Accumulates d(sum_ij output[i,j] * output_grad[i,j]) / d(params) into
/// `grads`. Call grads.zero() first when a fresh gradient is wanted.
inline void mlp_backward(const MlpParams& net, const ForwardTape& tape,
                         const Matrix2D& output_grad, MlpGrads& grads,
                         Matrix2D* scratch_dz = nullptr) {
  const std::size_t n_layers = net.n_layers();
  Matrix2D local_dz;
  Matrix2D& dz = scratch_dz ? *scratch_dz : local_dz;
  dz = output_grad;
  for (std::size_t li = n_layers; li-- > 0;) {
    const Matrix2D& below = li == 0 ? tape.input : tape.post[li - 1];
    matmul_tn_acc(dz, below, grads.weights[li]);
    double* db = grads.biases[li].data();
    for (std::size_t i = 0; i < dz.rows; ++i) {
      const double* dzr = dz.row(i);
#pragma omp simd
      for (std::size_t j = 0; j < dz.cols; ++j) db[j] += dzr[j];
    }
    if (li == 0) break;
    Matrix2D da(dz.rows, net.layer_sizes[li]);
    matmul_nn_acc(dz, net.weights[li], da);
    const Matrix2D& z = tape.pre[li - 1];
    for (std::size_t i = 0; i < da.size(); ++i)
      da.data[i] *= activate_grad(net.activation, z.data[i]);
    dz = std::move(da);
  }
}

inline double grad_squared_norm(const MlpGrads& g) {
  double s = 0.0;
  for (const auto& w : g.weights)
    for (double x : w.data) s += x * x;
  for (const auto& b : g.biases)
    for (double x : b) s += x * x;
  return s;
}

inline double grad_norm(const MlpGrads& g) { return std::sqrt(grad_squared_norm(g)); }

inline void adam_step(MlpParams& net, const MlpGrads& grads, double lr, double beta1 = 0.9,
                      double beta2 = 0.999, double eps = 1e-8) {
  AdamState& st = net.adam;
  for (std::size_t l = 0; l < net.n_layers(); ++l)
    if (!all_finite(grads.weights[l]) || !all_finite(grads.biases[l]))
      throw NonFiniteError("non-finite gradient for layer " + std::to_string(l));
  st.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  auto update = [&](double* theta, double* m, double* v, const double* g, std::size_t n) {
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  };
  for (std::size_t l = 0; l < net.n_layers(); ++l) {
    update(net.weights[l].data.data(), st.m.weights[l].data.data(),
           st.v.weights[l].data.data(), grads.weights[l].data.data(),
           net.weights[l].size());
    update(net.biases[l].data(), st.m.biases[l].data(), st.v.biases[l].data(),
           grads.biases[l].data(), net.biases[l].size());
  }
}

/// target <- rho * target + (1 - rho) * live, elementwise over all parameters.
inline void polyak_update(MlpParams& target, const MlpParams& live, double rho) {
  for (std::size_t l = 0; l < target.n_layers(); ++l) {
    double* t = target.weights[l].data.data();
    const double* s = live.weights[l].data.data();
    const std::size_t n = target.weights[l].size();
#pragma omp simd
    for (std::size_t i = 0; i < n; ++i) t[i] = rho * t[i] + (1.0 - rho) * s[i];
    double* tb = target.biases[l].data();
    const double* sb = live.biases[l].data();
#pragma omp simd
    for (std::size_t i = 0; i < target.biases[l].size(); ++i)
      tb[i] = rho * tb[i] + (1.0 - rho) * sb[i];
  }
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "ISEPNN1", then layer count and layer sizes as
// 32-bit little-endian integers, then all weight matrices (row-major, layer
// order) followed by all bias vectors as 64-bit little-endian doubles.
// ---------------------------------------------------------------------------

inline void save_mlp(const MlpParams& net, std::ostream& out) {
  out.write("ISEPNN1", 7);
  const std::uint32_t count = static_cast<std::uint32_t>(net.layer_sizes.size());
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (std::size_t s : net.layer_sizes) {
    const std::uint32_t v = static_cast<std::uint32_t>(s);
    out.write(reinterpret_cast<const char*>(&v), 4);
  }
  for (const auto& w : net.weights)
    out.write(reinterpret_cast<const char*>(w.data.data()),
              static_cast<std::streamsize>(w.data.size() * 8));
  for (const auto& b : net.biases)
    out.write(reinterpret_cast<const char*>(b.data()),
              static_cast<std::streamsize>(b.size() * 8));
}

inline void save_mlp(const MlpParams& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  save_mlp(net, f);
  if (!f) throw std::runtime_error("short write to " + path);
}

inline MlpParams load_mlp(std::istream& in, Activation activation) {
  char magic[7];
  in.read(magic, 7);
  if (!in || std::memcmp(magic, "ISEPNN1", 7) != 0)
    throw std::runtime_error("bad checkpoint: magic mismatch");
  std::uint32_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in || count < 2 || count > 64)
    throw std::runtime_error("bad checkpoint: implausible layer count");
  std::vector<std::size_t> sizes(count);
  for (auto& s : sizes) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in || v == 0) throw std::runtime_error("bad checkpoint: invalid layer size");
    s = v;
  }
  MlpParams net;
  net.layer_sizes = sizes;
  net.activation = activation;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Matrix2D w(sizes[l + 1], sizes[l]);
    in.read(reinterpret_cast<char*>(w.data.data()),
            static_cast<std::streamsize>(w.data.size() * 8));
    net.weights.push_back(std::move(w));
  }
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    std::vector<double> b(sizes[l + 1]);
    in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size() * 8));
    net.biases.push_back(std::move(b));
  }
  if (!in) throw std::runtime_error("bad checkpoint: truncated file");
  net.adam.m = make_grads(net);
  net.adam.v = make_grads(net);
  return net;
}

inline MlpParams load_mlp(const std::string& path, Activation activation) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  return load_mlp(f, activation);
}

}  // namespace isep
