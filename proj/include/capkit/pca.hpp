#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "capkit/tensor_io.hpp"

namespace capkit {

/// Principal component projection fitted on one sample matrix.
struct PCAModel {
  Eigen::VectorXd mean;
  /// [out_dim x in_dim]; orthonormal rows in order of decreasing variance.
  Eigen::MatrixXd components;
  /// Sample variance (N - 1 denominator) along each kept component.
  Eigen::VectorXd explained_variance;
  double total_variance = 0.0;
  /// sum(explained_variance) / total_variance
  double retained_variance = 0.0;

  int in_dim() const { return static_cast<int>(components.cols()); }
  int out_dim() const { return static_cast<int>(components.rows()); }
};

/// Top eigenvectors of the sample covariance of `samples` [N x in_dim].
/// Uses the N x N Gram matrix when N < in_dim. Components without variance
/// (rank-deficient data) are completed to an orthonormal set. Each
/// component's largest-magnitude entry is made positive.
PCAModel fit_pca(const Eigen::MatrixXd& samples, int out_dim);

Eigen::VectorXd pca_project(const PCAModel& model, std::span<const double> x);
/// Rows of `x` projected; returns [N x out_dim].
Eigen::MatrixXd pca_project_rows(const PCAModel& model, const Eigen::MatrixXd& x);
/// mean + components^T * code
Eigen::VectorXd pca_reconstruct(const PCAModel& model, const Eigen::VectorXd& code);

/// Separate projections for the horizontal and vertical flow channels.
struct FlowPCA {
  PCAModel u;
  PCAModel v;
  int out_dim() const { return u.out_dim() + v.out_dim(); }
};

/// Fits both channel models on flow frames [N, 2, H, W].
FlowPCA fit_flow_pca(std::span<const ArrayD> flows, int per_channel_dim);
/// flow_frame [2, H, W] -> [2 * per_channel_dim], u code then v code.
std::vector<double> apply_pca(const FlowPCA& model, const ArrayD& flow_frame);
/// All frames of a clip flow [T, 2, H, W] -> [T, 2 * per_channel_dim].
ArrayD apply_pca_clip(const FlowPCA& model, const ArrayD& flow);

void save_flow_pca(const std::string& path, const FlowPCA& model);
FlowPCA load_flow_pca(const std::string& path);

}  // namespace capkit
