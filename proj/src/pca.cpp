#include "capkit/pca.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "capkit/error.hpp"

namespace capkit {

namespace {

void orient(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  if (v(idx) < 0) v = -v;
}

}  // namespace

PCAModel fit_pca(const Eigen::MatrixXd& samples, int out_dim) {
  const auto n = samples.rows();
  const auto d = samples.cols();
  CAPKIT_CHECK(out_dim >= 1 && out_dim <= d, "bad_config",
               "PCA out_dim " + std::to_string(out_dim) + " outside [1, " + std::to_string(d) + "]");
  CAPKIT_CHECK(n > out_dim, "bad_config",
               "PCA needs more samples (" + std::to_string(n) + ") than components (" +
                   std::to_string(out_dim) + ")");

  PCAModel m;
  m.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - m.mean.transpose();
  const double denom = static_cast<double>(n - 1);
  m.total_variance = centered.squaredNorm() / denom;
  m.components.resize(out_dim, d);
  m.explained_variance.resize(out_dim);

  if (d <= n) {
    const Eigen::MatrixXd cov = centered.transpose() * centered / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    for (int k = 0; k < out_dim; ++k) {
      const auto col = d - 1 - k;  // eigenvalues ascending
      m.explained_variance(k) = std::max(0.0, es.eigenvalues()(col));
      m.components.row(k) = es.eigenvectors().col(col).transpose();
    }
  } else {
    // Covariance eigenvectors from the Gram matrix: v = X^T u / sqrt(lambda (N-1)).
    const Eigen::MatrixXd gram = centered * centered.transpose() / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    const double tol = 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
    int filled = 0;
    for (int k = 0; k < out_dim; ++k) {
      const auto col = n - 1 - k;
      const double lambda = es.eigenvalues()(col);
      if (lambda <= tol) break;
      Eigen::VectorXd v = centered.transpose() * es.eigenvectors().col(col) / std::sqrt(lambda * denom);
      v.normalize();
      m.components.row(k) = v.transpose();
      m.explained_variance(k) = lambda;
      ++filled;
    }
    // Complete with unit vectors orthogonal to what is already present.
    Eigen::Index basis = 0;
    for (int k = filled; k < out_dim; ++k) {
      while (true) {
        CAPKIT_CHECK(basis < d, "internal", "PCA basis completion failed");
        Eigen::VectorXd e = Eigen::VectorXd::Unit(d, basis++);
        for (int r = 0; r < k; ++r) e -= m.components.row(r).dot(e) * m.components.row(r).transpose();
        for (int r = 0; r < k; ++r) e -= m.components.row(r).dot(e) * m.components.row(r).transpose();
        if (e.norm() > 1e-6) {
          m.components.row(k) = e.normalized().transpose();
          break;
        }
      }
      m.explained_variance(k) = 0.0;
    }
  }
  for (int k = 0; k < out_dim; ++k) {
    Eigen::VectorXd row = m.components.row(k).transpose();
    orient(row);
    m.components.row(k) = row.transpose();
  }
  m.retained_variance =
      m.total_variance > 0.0 ? std::min(1.0, m.explained_variance.sum() / m.total_variance) : 1.0;
  return m;
}

Eigen::VectorXd pca_project(const PCAModel& model, std::span<const double> x) {
  CAPKIT_CHECK(static_cast<int>(x.size()) == model.in_dim(), "shape_mismatch",
               "PCA input has " + std::to_string(x.size()) + " values, model expects " +
                   std::to_string(model.in_dim()));
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  return model.components * (xv - model.mean);
}

Eigen::MatrixXd pca_project_rows(const PCAModel& model, const Eigen::MatrixXd& x) {
  CAPKIT_CHECK(x.cols() == model.in_dim(), "shape_mismatch", "PCA input width mismatch");
  return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

Eigen::VectorXd pca_reconstruct(const PCAModel& model, const Eigen::VectorXd& code) {
  CAPKIT_CHECK(code.size() == model.out_dim(), "shape_mismatch", "PCA code width mismatch");
  return model.mean + model.components.transpose() * code;
}

// ---------------------------------------------------------------------------

FlowPCA fit_flow_pca(std::span<const ArrayD> flows, int per_channel_dim) {
  CAPKIT_CHECK(!flows.empty(), "bad_config", "no flow frames to fit");
  const auto& s = flows.front().shape;
  CAPKIT_CHECK(s.size() == 3 && s[0] == 2, "shape_mismatch", "flow frames must be [2, H, W]");
  const auto plane = static_cast<Eigen::Index>(s[1] * s[2]);
  Eigen::MatrixXd us(static_cast<Eigen::Index>(flows.size()), plane);
  Eigen::MatrixXd vs(static_cast<Eigen::Index>(flows.size()), plane);
  for (std::size_t i = 0; i < flows.size(); ++i) {
    CAPKIT_CHECK(flows[i].shape == s, "shape_mismatch", "flow frames differ in shape");
    const auto r = static_cast<Eigen::Index>(i);
    us.row(r) = Eigen::Map<const Eigen::RowVectorXd>(flows[i].data.data(), plane);
    vs.row(r) = Eigen::Map<const Eigen::RowVectorXd>(flows[i].data.data() + plane, plane);
  }
  return FlowPCA{fit_pca(us, per_channel_dim), fit_pca(vs, per_channel_dim)};
}

std::vector<double> apply_pca(const FlowPCA& model, const ArrayD& flow_frame) {
  CAPKIT_CHECK(flow_frame.shape.size() == 3 && flow_frame.shape[0] == 2, "shape_mismatch",
               "flow frame must be [2, H, W]");
  const auto plane = static_cast<std::size_t>(flow_frame.shape[1] * flow_frame.shape[2]);
  std::span<const double> all(flow_frame.data);
  const Eigen::VectorXd cu = pca_project(model.u, all.subspan(0, plane));
  const Eigen::VectorXd cv = pca_project(model.v, all.subspan(plane, plane));
  std::vector<double> out(cu.data(), cu.data() + cu.size());
  out.insert(out.end(), cv.data(), cv.data() + cv.size());
  return out;
}

ArrayD apply_pca_clip(const FlowPCA& model, const ArrayD& flow) {
  CAPKIT_CHECK(flow.shape.size() == 4 && flow.shape[1] == 2, "shape_mismatch", "flow must be [T, 2, H, W]");
  const auto t_n = static_cast<Eigen::Index>(flow.shape[0]);
  const auto plane = static_cast<Eigen::Index>(flow.shape[2] * flow.shape[3]);
  CAPKIT_CHECK(plane == model.u.in_dim(), "shape_mismatch",
               "flow plane has " + std::to_string(plane) + " values, PCA expects " +
                   std::to_string(model.u.in_dim()));
  Eigen::MatrixXd us(t_n, plane);
  Eigen::MatrixXd vs(t_n, plane);
  for (Eigen::Index t = 0; t < t_n; ++t) {
    const double* base = flow.data.data() + t * 2 * plane;
    us.row(t) = Eigen::Map<const Eigen::RowVectorXd>(base, plane);
    vs.row(t) = Eigen::Map<const Eigen::RowVectorXd>(base + plane, plane);
  }
  const Eigen::MatrixXd cu = pca_project_rows(model.u, us);
  const Eigen::MatrixXd cv = pca_project_rows(model.v, vs);
  const int k = model.out_dim();
  ArrayD out({t_n, k});
  for (Eigen::Index t = 0; t < t_n; ++t) {
    for (Eigen::Index j = 0; j < cu.cols(); ++j) out.data[static_cast<std::size_t>(t * k + j)] = cu(t, j);
    for (Eigen::Index j = 0; j < cv.cols(); ++j) {
      out.data[static_cast<std::size_t>(t * k + cu.cols() + j)] = cv(t, j);
    }
  }
  return out;
}

namespace {

void add_model(TarWriter& tar, const std::string& prefix, const PCAModel& m) {
  std::vector<double> comps(static_cast<std::size_t>(m.components.size()));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      comps.data(), m.components.rows(), m.components.cols()) = m.components;
  const std::vector<std::int64_t> cshape = {m.components.rows(), m.components.cols()};
  tar.add(prefix + "components.json", tensor_sidecar(cshape, DType::kF64));
  tar.add(prefix + "components.bin", tensor_payload(comps, DType::kF64));
  const std::vector<std::int64_t> mshape = {m.mean.size()};
  tar.add(prefix + "mean.json", tensor_sidecar(mshape, DType::kF64));
  tar.add(prefix + "mean.bin", tensor_payload({m.mean.data(), static_cast<std::size_t>(m.mean.size())}, DType::kF64));
  const std::vector<std::int64_t> vshape = {m.explained_variance.size()};
  tar.add(prefix + "variance.json", tensor_sidecar(vshape, DType::kF64));
  tar.add(prefix + "variance.bin",
          tensor_payload({m.explained_variance.data(), static_cast<std::size_t>(m.explained_variance.size())},
                         DType::kF64));
}

PCAModel read_model(const std::map<std::string, std::string>& e, const std::string& prefix,
                    double total_variance) {
  auto get = [&](const std::string& name) {
    auto js = e.find(prefix + name + ".json");
    auto bin = e.find(prefix + name + ".bin");
    CAPKIT_CHECK(js != e.end() && bin != e.end(), "bad_archive", "PCA archive lacks " + prefix + name);
    return decode_tensor(js->second, bin->second);
  };
  PCAModel m;
  const ArrayD c = get("components");
  CAPKIT_CHECK(c.shape.size() == 2, "bad_archive", "PCA components must be 2-D");
  m.components = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      c.data.data(), c.shape[0], c.shape[1]);
  const ArrayD mean = get("mean");
  m.mean = Eigen::Map<const Eigen::VectorXd>(mean.data.data(), static_cast<Eigen::Index>(mean.size()));
  const ArrayD var = get("variance");
  m.explained_variance = Eigen::Map<const Eigen::VectorXd>(var.data.data(), static_cast<Eigen::Index>(var.size()));
  CAPKIT_CHECK(m.mean.size() == m.components.cols() && m.explained_variance.size() == m.components.rows(),
               "bad_archive", "PCA archive shapes disagree");
  m.total_variance = total_variance;
  m.retained_variance = total_variance > 0 ? std::min(1.0, m.explained_variance.sum() / total_variance) : 1.0;
  return m;
}

}  // namespace

void save_flow_pca(const std::string& path, const FlowPCA& model) {
  TarWriter tar;
  nlohmann::json meta = {{"kind", "flow_pca"},
                         {"per_channel_dim", model.u.out_dim()},
                         {"in_dim", model.u.in_dim()},
                         {"total_variance", {model.u.total_variance, model.v.total_variance}},
                         {"retained_variance", {model.u.retained_variance, model.v.retained_variance}}};
  tar.add("meta.json", meta.dump(1));
  add_model(tar, "u/", model.u);
  add_model(tar, "v/", model.v);
  tar.save(path);
}

FlowPCA load_flow_pca(const std::string& path) {
  const auto e = read_tar(path);
  auto it = e.find("meta.json");
  CAPKIT_CHECK(it != e.end(), "bad_archive", path + " is not a flow PCA archive");
  const auto meta = nlohmann::json::parse(it->second);
  CAPKIT_CHECK(meta.value("kind", "") == "flow_pca", "bad_archive", path + " is not a flow PCA archive");
  const auto tv = meta.at("total_variance").get<std::vector<double>>();
  return FlowPCA{read_model(e, "u/", tv.at(0)), read_model(e, "v/", tv.at(1))};
}

}  // namespace capkit
