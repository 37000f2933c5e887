#pragma once

// Reference-conditioned convolutional denoiser with hand-written backprop.
//
// Denoising path: encoder of `depth` levels (3x3 convs, stride-2 downsampling,
// sinusoidal timestep embedding added per level), single-head self-attention
// at `attn_level`, decoder with nearest upsampling and skip concatenation.
// Reference path: a separately weighted copy of the encoder run on the garment
// once per sample; its features at the attention level are appended to the
// attention keys/values (queries come from the denoising path only).

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dsvton/image.hpp"
#include "dsvton/parallel.hpp"

namespace dsvton {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NetworkConfig {
  int base_channels = 32;
  int depth = 3;
  int attn_level = 2;
  int time_embed_dim = 32;
  int latent_channels = 3;
  int person_channels = 3;
  int garment_channels = 3;

  // Mask-free conditioning: noisy latent and person image concatenated.
  int in_channels() const { return latent_channels + person_channels; }
  int out_channels() const { return latent_channels; }
  int level_channels(int level) const { return base_channels << level; }
  // Input height/width must be divisible by this.
  int spatial_multiple() const { return 1 << (depth - 1); }

  void validate() const;
  bool operator==(const NetworkConfig&) const = default;
};

struct ParamTensor {
  std::string name;
  std::string group;
  Index offset = 0;
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
};

/// Named, disjoint index ranges covering the flat parameter vector exactly.
class ParamLayout {
 public:
  const ParamTensor& add(const std::string& name, const std::string& group, Index rows, Index cols);
  const ParamTensor& at(const std::string& name) const;
  const std::vector<ParamTensor>& tensors() const { return tensors_; }
  std::vector<std::string> groups() const;
  Index total() const { return total_; }

 private:
  std::vector<ParamTensor> tensors_;
  std::map<std::string, std::size_t> index_;
  Index total_ = 0;
};

ParamLayout build_layout(const NetworkConfig& cfg);

struct DenoiserParams {
  NetworkConfig config;
  ParamLayout layout;
  Eigen::VectorXd values;

  Index size() const { return values.size(); }
  Eigen::Map<const RowMatrix> tensor(const std::string& name) const;
  Eigen::Map<RowMatrix> tensor(const std::string& name);
};

/// Garment features at each attention site, computed once per sample.
struct ReferenceFeatures {
  struct Site {
    RowMatrix features;  // (height * width) x channels
    Index height = 0;
    Index width = 0;
  };
  std::vector<Site> sites;
};

/// One supervised example for loss_and_grad. The garment is carried instead
/// of precomputed ReferenceFeatures so gradients reach the reference weights.
struct TrainItem {
  Image x_in;
  Image person;
  Image garment;
  int t = 1;
  Image target;
};

DenoiserParams init_params(const NetworkConfig& cfg, std::uint64_t seed);

ReferenceFeatures reference_encode(const Image& garment, const DenoiserParams& params);

Image predict_noise(const Image& x_in, const Image& person, int t, const ReferenceFeatures& ref,
                    const DenoiserParams& params);

struct LossAndGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// Batch-mean of per-item mean squared error, with its exact gradient.
/// Items are evaluated in parallel (DSVTON_THREADS caps the fan-out) and
/// per-item gradients are summed in item order, so the result does not depend
/// on the worker count.
LossAndGrad loss_and_grad(const std::vector<TrainItem>& batch, const DenoiserParams& params);

/// Loss only (no gradient bookkeeping).
double batch_loss(const std::vector<TrainItem>& batch, const DenoiserParams& params);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Index n) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    return s;
  }
};

/// Decoupled weight decay Adam: p *= (1 - lr * wd), then the bias-corrected
/// Adam update.
void adamw_step(DenoiserParams& params, const Eigen::VectorXd& grads, AdamState& state, double lr,
                double weight_decay);

struct GradientFault {
  std::string group;   // empty: no fault
  double scale = 1.5;  // analytic gradient of `group` multiplied by this
};

struct GradientCheckReport {
  std::map<std::string, double> group_max_rel_error;
  std::map<std::string, int> group_coords;
  double max_rel_error = 0.0;
};

/// Compares analytic gradients with central differences on coordinates
/// sampled evenly from every parameter tensor.
GradientCheckReport gradient_check(const DenoiserParams& params, const std::vector<TrainItem>& batch,
                                   int n_coords, double fd_eps = 1e-4, std::uint64_t seed = 0,
                                   const GradientFault& fault = {});

}  // namespace dsvton
