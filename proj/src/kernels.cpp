#include "chmm/kernels.hpp"

#include <array>
#include <stdexcept>

namespace chmm::kernels {

namespace {

Index block_count(Index rows) { return (rows + kBlockRows - 1) / kBlockRows; }

Index block_begin(Index b) { return b * kBlockRows; }

Index block_size(Index b, Index rows) { return std::min(kBlockRows, rows - block_begin(b)); }

}  // namespace

void relu_project(const Matrix& X, const Matrix& W, double scale, Matrix& out) {
  if (X.cols() != W.cols()) throw std::invalid_argument("relu_project: column mismatch");
  const Index n = X.rows();
  out.resize(n, W.rows());
  const Index blocks = block_count(n);
#pragma omp parallel for schedule(static)
  for (Index b = 0; b < blocks; ++b) {
    const Index r0 = block_begin(b), len = block_size(b, n);
    auto dst = out.middleRows(r0, len);
    dst.noalias() = X.middleRows(r0, len) * W.transpose();
    dst = (dst.array() * scale).cwiseMax(0.0);
  }
}

Matrix symmetric_moment(const Matrix& A) {
  const Index n = A.rows(), p = A.cols();
  const Index blocks = block_count(n);
  std::array<Eigen::MatrixXd, kLanes> lanes;
#pragma omp parallel for schedule(static)
  for (int lane = 0; lane < kLanes; ++lane) {
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(p, p);
    for (Index b = lane; b < blocks; b += kLanes) {
      acc.selfadjointView<Eigen::Lower>().rankUpdate(
          A.middleRows(block_begin(b), block_size(b, n)).transpose());
    }
    lanes[lane] = std::move(acc);
  }
  Eigen::MatrixXd total = lanes[0];
  for (int lane = 1; lane < kLanes; ++lane) total += lanes[lane];
  Matrix out = total.selfadjointView<Eigen::Lower>();
  return out;
}

Matrix cross_moment(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows()) throw std::invalid_argument("cross_moment: row mismatch");
  const Index n = A.rows();
  const Index blocks = block_count(n);
  std::array<Matrix, kLanes> lanes;
#pragma omp parallel for schedule(static)
  for (int lane = 0; lane < kLanes; ++lane) {
    Matrix acc = Matrix::Zero(A.cols(), B.cols());
    for (Index b = lane; b < blocks; b += kLanes) {
      const Index r0 = block_begin(b), len = block_size(b, n);
      acc.noalias() += A.middleRows(r0, len).transpose() * B.middleRows(r0, len);
    }
    lanes[lane] = std::move(acc);
  }
  Matrix total = std::move(lanes[0]);
  for (int lane = 1; lane < kLanes; ++lane) total += lanes[lane];
  return total;
}

Vector column_sums(const Matrix& A) {
  Vector out = Vector::Zero(A.cols());
  const Index blocks = block_count(A.rows());
  for (Index b = 0; b < blocks; ++b)
    out += A.middleRows(block_begin(b), block_size(b, A.rows())).colwise().sum().transpose();
  return out;
}

LogisticTerms logistic_terms(const Matrix& V, const Vector& y, const Vector& w, double scale,
                             bool with_hessian) {
  if (V.rows() != y.size() || V.cols() != w.size())
    throw std::invalid_argument("logistic_terms: shape mismatch");
  const Index n = V.rows(), p = V.cols();
  const Index blocks = block_count(n);
  std::array<double, kLanes> loss{};
  std::array<Vector, kLanes> grad;
  std::array<Eigen::MatrixXd, kLanes> hess;
#pragma omp parallel for schedule(static)
  for (int lane = 0; lane < kLanes; ++lane) {
    double l = 0.0;
    Vector g = Vector::Zero(p);
    Eigen::MatrixXd h;
    if (with_hessian) h = Eigen::MatrixXd::Zero(p, p);
    for (Index b = lane; b < blocks; b += kLanes) {
      const Index r0 = block_begin(b), len = block_size(b, n);
      const auto Vb = V.middleRows(r0, len);
      const Vector z = scale * (Vb * w);
      Vector coef(len), curv(len);
      for (Index i = 0; i < len; ++i) {
        const double yz = y(r0 + i) * z(i);
        l += softplus(-yz);
        coef(i) = -y(r0 + i) * sigmoid(-yz);
        const double s = sigmoid(yz);
        curv(i) = std::sqrt(s * (1.0 - s));
      }
      g.noalias() += Vb.transpose() * coef;
      if (with_hessian) {
        Matrix scaled = curv.asDiagonal() * Vb;
        h.selfadjointView<Eigen::Lower>().rankUpdate(scaled.transpose());
      }
    }
    loss[lane] = l;
    grad[lane] = std::move(g);
    if (with_hessian) hess[lane] = std::move(h);
  }
  LogisticTerms out;
  out.loss = loss[0];
  out.gradient = std::move(grad[0]);
  for (int lane = 1; lane < kLanes; ++lane) {
    out.loss += loss[lane];
    out.gradient += grad[lane];
  }
  out.gradient *= scale;
  if (with_hessian) {
    Eigen::MatrixXd total = std::move(hess[0]);
    for (int lane = 1; lane < kLanes; ++lane) total += hess[lane];
    out.hessian = total.selfadjointView<Eigen::Lower>();
    out.hessian *= scale * scale;
  }
  return out;
}

double logistic_loss(const Matrix& V, const Vector& y, const Vector& w, double scale) {
  const Index n = V.rows();
  const Index blocks = block_count(n);
  std::array<double, kLanes> loss{};
#pragma omp parallel for schedule(static)
  for (int lane = 0; lane < kLanes; ++lane) {
    double l = 0.0;
    for (Index b = lane; b < blocks; b += kLanes) {
      const Index r0 = block_begin(b), len = block_size(b, n);
      const Vector z = scale * (V.middleRows(r0, len) * w);
      for (Index i = 0; i < len; ++i) l += softplus(-y(r0 + i) * z(i));
    }
    loss[lane] = l;
  }
  double total = 0.0;
  for (double l : loss) total += l;
  return total;
}

}  // namespace chmm::kernels
