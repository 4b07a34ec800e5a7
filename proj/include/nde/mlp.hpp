#pragma once

// Multilayer perceptrons with tanh hidden activations and identity output,
// optional biases, Glorot-uniform initialization, and the spectral-sum and
// l2 weight regularizers.
//
// Flat parameter layout (used by the decision vector and checkpoints): for
// each layer, W row-major, then b when biases are enabled.

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "nde/ad.hpp"
#include "nde/error.hpp"
#include "nde/ops.hpp"

namespace nde {

enum class Activation { tanh, identity };

struct MlpParams {
  std::vector<int> layer_sizes;
  bool use_bias = false;
  std::uint64_t seed = 0;
  std::vector<Eigen::MatrixXd> weights;  // out × in
  std::vector<Eigen::VectorXd> biases;   // empty when use_bias is false
  std::vector<Activation> activations;

  std::size_t layers() const { return weights.size(); }
  Eigen::Index input_size() const { return layer_sizes.front(); }
  Eigen::Index output_size() const { return layer_sizes.back(); }

  Eigen::Index parameter_count() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
      n += static_cast<Eigen::Index>(layer_sizes[l]) * layer_sizes[l + 1];
      if (use_bias) n += layer_sizes[l + 1];
    }
    return n;
  }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd out(parameter_count());
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const auto& w = weights[l];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) out[k++] = w(r, c);
      if (use_bias) {
        out.segment(k, biases[l].size()) = biases[l];
        k += biases[l].size();
      }
    }
    return out;
  }

  /// Overwrite all weights (and biases) from a flat vector.
  void assign(const Eigen::Ref<const Eigen::VectorXd>& flat) {
    if (flat.size() != parameter_count()) throw InputError("MlpParams::assign: size mismatch");
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      auto& w = weights[l];
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = flat[k++];
      if (use_bias) {
        biases[l] = flat.segment(k, biases[l].size());
        k += biases[l].size();
      }
    }
  }
};

/// Glorot-uniform weights on [−L, L], L = sqrt(6 / (fan_in + fan_out)); zero biases.
inline MlpParams mlp_new(const std::vector<int>& layer_sizes, bool use_bias, std::uint64_t seed) {
  if (layer_sizes.size() < 2) throw ArchitectureError("mlp_new: need at least two layer sizes");
  for (int s : layer_sizes)
    if (s <= 0) throw ArchitectureError("mlp_new: layer sizes must be positive");

  MlpParams p;
  p.layer_sizes = layer_sizes;
  p.use_bias = use_bias;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const int fan_in = layer_sizes[l];
    const int fan_out = layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    p.weights.push_back(std::move(w));
    if (use_bias) p.biases.push_back(Eigen::VectorXd::Zero(fan_out));
    p.activations.push_back(l + 2 < layer_sizes.size() ? Activation::tanh : Activation::identity);
  }
  return p;
}

/// Network whose parameters are slices of a taped decision vector.
struct TapedMlp {
  std::vector<ad::MatVar> weights;
  std::vector<ad::Var> biases;
  std::vector<Activation> activations;
  bool use_bias = false;
};

/// Bind the parameters stored at z[offset, offset + shape.parameter_count()).
inline TapedMlp bind(const ad::Var& z, const MlpParams& shape, Eigen::Index offset = 0) {
  TapedMlp net;
  net.use_bias = shape.use_bias;
  net.activations = shape.activations;
  Eigen::Index k = offset;
  for (std::size_t l = 0; l < shape.weights.size(); ++l) {
    const auto rows = shape.weights[l].rows();
    const auto cols = shape.weights[l].cols();
    net.weights.push_back(ad::as_matrix(ad::slice(z, k, rows * cols), rows, cols));
    k += rows * cols;
    if (shape.use_bias) {
      net.biases.push_back(ad::slice(z, k, rows));
      k += rows;
    }
  }
  return net;
}

/// Alternating affine map and activation. Works for MlpParams with Eigen
/// vectors and for TapedMlp with ad::Var.
template <class Net, class V>
V mlp_forward(const Net& net, const V& input) {
  if (net.weights.empty()) throw ArchitectureError("mlp_forward: empty network");
  if (ops::size(input) != ops::cols(net.weights.front()))
    throw InputError("mlp_forward: input has length " + std::to_string(ops::size(input)) +
                     ", expected " + std::to_string(ops::cols(net.weights.front())));
  V x = input;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    V y = ops::matvec(net.weights[l], x);
    if (net.use_bias) y = V(y + net.biases[l]);
    if (net.activations[l] == Activation::tanh) y = ops::tanh(y);
    x = std::move(y);
  }
  return x;
}

/// Largest singular value by power iteration on WᵀW from the normalized
/// all-ones vector. Returns exactly 0 when the iterate collapses (W = 0).
inline double spectral_norm(const Eigen::MatrixXd& w, int iters) {
  if (w.size() == 0) throw InputError("spectral_norm: empty matrix");
  if (iters <= 0) throw InputError("spectral_norm: iterations must be positive");
  Eigen::VectorXd v = Eigen::VectorXd::Ones(w.cols()) / std::sqrt(static_cast<double>(w.cols()));
  for (int i = 0; i < iters; ++i) {
    const Eigen::VectorXd u = w.transpose() * (w * v);
    const double n = u.norm();
    if (n == 0.0) return 0.0;
    v = u / n;
  }
  return (w * v).norm();
}

/// Taped spectral_norm; the power iterations are recorded and differentiated.
inline ad::Var spectral_norm(const ad::MatVar& w, int iters) {
  if (w.rows * w.cols == 0) throw InputError("spectral_norm: empty matrix");
  if (iters <= 0) throw InputError("spectral_norm: iterations must be positive");
  ad::Tape& tape = *w.data.tape();
  ad::Var v = tape.constant(Eigen::VectorXd::Ones(w.cols) / std::sqrt(static_cast<double>(w.cols)));
  for (int i = 0; i < iters; ++i) {
    const ad::Var u = ad::matvec_t(w, ad::matvec(w, v));
    const ad::Var n = ad::norm(u);
    if (n.scalar() == 0.0) return tape.constant(0.0);
    v = ad::div_scalar(u, n);
  }
  return ad::norm(ad::matvec(w, v));
}

enum class RegKind { spectral_sum, l2 };

struct RegSpec {
  RegKind kind = RegKind::spectral_sum;
  double weight = 0.0;
  int power_iterations = 25;
};

/// Unscaled regularizer R: Σ_l spectral_norm(W_l) or Σ w². Biases excluded.
inline double regularizer(const MlpParams& p, const RegSpec& spec) {
  double r = 0.0;
  for (const auto& w : p.weights)
    r += spec.kind == RegKind::l2 ? w.squaredNorm() : spectral_norm(w, spec.power_iterations);
  return r;
}

inline ad::Var regularizer(const TapedMlp& net, const RegSpec& spec) {
  if (net.weights.empty()) throw ArchitectureError("regularizer: empty network");
  ad::Var r;
  for (const auto& w : net.weights) {
    ad::Var term =
        spec.kind == RegKind::l2 ? ad::sum_squares(w.data) : spectral_norm(w, spec.power_iterations);
    r = r.valid() ? r + term : term;
  }
  return r;
}

inline const char* to_string(RegKind k) { return k == RegKind::l2 ? "l2" : "spectral_sum"; }

inline RegKind reg_kind_from(const std::string& s) {
  if (s == "l2") return RegKind::l2;
  if (s == "spectral_sum") return RegKind::spectral_sum;
  throw ConfigError("unknown regularizer kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const MlpParams& p) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["seed"] = p.seed;
  j["layer_sizes"] = p.layer_sizes;
  j["use_bias"] = p.use_bias;
  auto& acts = j["activations"] = nlohmann::json::array();
  for (auto a : p.activations) acts.push_back(a == Activation::tanh ? "tanh" : "identity");
  auto& layers = j["weights"] = nlohmann::json::array();
  for (const auto& w : p.weights) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) flat.push_back(w(r, c));
    layers.push_back({{"rows", w.rows()}, {"cols", w.cols()}, {"data", flat}});
  }
  auto& biases = j["biases"] = nlohmann::json::array();
  for (const auto& b : p.biases) biases.push_back(std::vector<double>(b.data(), b.data() + b.size()));
  return j;
}

inline MlpParams mlp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion)
      throw FormatError("checkpoint: unsupported format_version");
    MlpParams p = mlp_new(j.at("layer_sizes").get<std::vector<int>>(), j.at("use_bias").get<bool>(),
                          j.at("seed").get<std::uint64_t>());
    const auto& layers = j.at("weights");
    if (layers.size() != p.weights.size()) throw FormatError("checkpoint: layer count mismatch");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto rows = layers[l].at("rows").get<Eigen::Index>();
      const auto cols = layers[l].at("cols").get<Eigen::Index>();
      const auto data = layers[l].at("data").get<std::vector<double>>();
      if (rows != p.weights[l].rows() || cols != p.weights[l].cols() ||
          static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw FormatError("checkpoint: layer " + std::to_string(l) + " has inconsistent shape");
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
          p.weights[l](r, c) = data[static_cast<std::size_t>(r * cols + c)];
    }
    if (p.use_bias) {
      const auto& biases = j.at("biases");
      if (biases.size() != p.biases.size()) throw FormatError("checkpoint: bias count mismatch");
      for (std::size_t l = 0; l < biases.size(); ++l) {
        const auto b = biases[l].get<std::vector<double>>();
        if (static_cast<Eigen::Index>(b.size()) != p.biases[l].size())
          throw FormatError("checkpoint: bias " + std::to_string(l) + " has wrong length");
        p.biases[l] = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
      }
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  } catch (const ArchitectureError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
}

}  // namespace nde
