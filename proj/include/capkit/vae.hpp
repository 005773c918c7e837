#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "capkit/autograd.hpp"
#include "capkit/tensor_io.hpp"

namespace capkit {

struct VaeConfig {
  int height = 32;
  int width = 64;
  int latent_dim = 64;
  int epochs = 6;
  int batch_size = 16;
  double learning_rate = 1e-3;
  /// Weight of the KL term against the unit Gaussian prior. The
  /// reconstruction term is a per-pixel mean, so this must stay small: at
  /// 1e-3 the posterior collapses and the latents carry no information.
  double beta = 1e-5;
  std::uint64_t seed = 1;
};

/// Convolutional VAE trained to reconstruct full frames from masked ones.
/// Encoder: three stride-2 3x3 convolutions then linear heads for the
/// latent mean and log-variance. Decoder mirrors it with nearest-neighbour
/// upsampling.
class VaeModel {
 public:
  explicit VaeModel(const VaeConfig& config);

  const VaeConfig& config() const { return config_; }
  ag::ParameterStore& params() { return params_; }
  const ag::ParameterStore& params() const { return params_; }

  struct Encoded {
    ag::Var mean;     // [N, D]
    ag::Var log_var;  // [N, D]
  };
  /// x: [N, 3, H, W] channel-first batch.
  Encoded encode(const ag::Var& x) const;
  /// z: [N, D] -> [N, 3, H, W] in (0, 1).
  ag::Var decode(const ag::Var& z) const;

 private:
  VaeConfig config_;
  ag::ParameterStore params_;
};

struct VaeTrainResult {
  VaeModel model;
  /// Mean training loss (reconstruction MSE + beta * KL) per epoch.
  std::vector<double> loss_history;
  /// Mean reconstruction MSE per epoch.
  std::vector<double> recon_history;
};

/// images: [H, W, 3] frames of one shape. Throws Error("diverged") on a
/// non-finite loss.
VaeTrainResult train_vae(const std::vector<ArrayD>& images, const VaeConfig& config);

/// Latent mean of the masked image; no sampling.
std::vector<double> vae_encode(const VaeModel& model, const ArrayD& image);
/// Latent means for every frame of a [T, H, W, 3] clip -> [T, D].
ArrayD vae_encode_clip(const VaeModel& model, const ArrayD& frames);
/// Decoded reconstruction of the masked image, [H, W, 3].
ArrayD vae_reconstruct(const VaeModel& model, const ArrayD& image);

void save_vae(const std::string& path, const VaeModel& model);
VaeModel load_vae(const std::string& path);

}  // namespace capkit
