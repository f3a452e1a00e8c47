#include <stdexcept>

#include "chmm/kernels.hpp"

namespace chmm::kernels::reference {

void relu_project(const Matrix& X, const Matrix& W, double scale, Matrix& out) {
  if (X.cols() != W.cols()) throw std::invalid_argument("relu_project: column mismatch");
  out.resize(X.rows(), W.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    for (Index h = 0; h < W.rows(); ++h) {
      double acc = 0.0;
      for (Index k = 0; k < X.cols(); ++k) acc += X(i, k) * W(h, k);
      acc *= scale;
      out(i, h) = acc > 0.0 ? acc : 0.0;
    }
  }
}

Matrix symmetric_moment(const Matrix& A) { return cross_moment(A, A); }

Matrix cross_moment(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows()) throw std::invalid_argument("cross_moment: row mismatch");
  Matrix out = Matrix::Zero(A.cols(), B.cols());
  for (Index i = 0; i < A.rows(); ++i)
    for (Index a = 0; a < A.cols(); ++a)
      for (Index b = 0; b < B.cols(); ++b) out(a, b) += A(i, a) * B(i, b);
  return out;
}

LogisticTerms logistic_terms(const Matrix& V, const Vector& y, const Vector& w, double scale,
                             bool with_hessian) {
  LogisticTerms out;
  out.gradient = Vector::Zero(V.cols());
  if (with_hessian) out.hessian = Matrix::Zero(V.cols(), V.cols());
  for (Index i = 0; i < V.rows(); ++i) {
    double z = 0.0;
    for (Index k = 0; k < V.cols(); ++k) z += V(i, k) * w(k);
    z *= scale;
    const double yz = y(i) * z;
    out.loss += softplus(-yz);
    const double d1 = -y(i) * sigmoid(-yz);
    const double d2 = sigmoid(yz) * sigmoid(-yz);
    for (Index a = 0; a < V.cols(); ++a) {
      out.gradient(a) += scale * d1 * V(i, a);
      if (!with_hessian) continue;
      for (Index b = 0; b < V.cols(); ++b) out.hessian(a, b) += scale * scale * d2 * V(i, a) * V(i, b);
    }
  }
  return out;
}

}  // namespace chmm::kernels::reference
