#include "degmon/contrastive_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "degmon/error.hpp"

namespace degmon {

template <typename T>
void ContrastiveBatch<T>::validate() const {
  const auto n = z_a.rows();
  if (n < 2) throw ValidationError("contrastive batch needs at least 2 pairs, got " + std::to_string(n));
  auto check = [&](const RowMatrix<T>& m, const char* name) {
    if (m.rows() != n || m.cols() != z_a.cols()) {
      throw ValidationError(std::string("contrastive block ") + name + " has a mismatched shape");
    }
  };
  check(z_b, "z_b");
  if (has_hard_negatives()) {
    check(z_hn_a, "z_hn_a");
    check(z_hn_b, "z_hn_b");
  }
}

template <typename T>
double nt_xent_loss(const ContrastiveBatch<T>& batch, double tau, ContrastiveBatch<T>* grad) {
  batch.validate();
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  const Eigen::Index n = batch.z_a.rows();
  const Eigen::Index dim = batch.z_a.cols();
  const int blocks = batch.has_hard_negatives() ? 4 : 2;
  const Eigen::Index m = n * blocks;

  Eigen::MatrixXd z(m, dim);
  z.topRows(n) = batch.z_a.template cast<double>();
  z.middleRows(n, n) = batch.z_b.template cast<double>();
  if (blocks == 4) {
    z.middleRows(2 * n, n) = batch.z_hn_a.template cast<double>();
    z.bottomRows(n) = batch.z_hn_b.template cast<double>();
  }
  // Block b pairs with block b ^ 1.
  auto positive = [n](Eigen::Index r) { return ((r / n) ^ 1) * n + r % n; };

  const Eigen::MatrixXd s = (z * z.transpose()) / tau;
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(m, m);
  double loss = 0.0;
  for (Eigen::Index r = 0; r < m; ++r) {
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != r) peak = std::max(peak, s(r, j));
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != r) sum += std::exp(s(r, j) - peak);
    }
    const double lse = peak + std::log(sum);
    const Eigen::Index p = positive(r);
    loss += lse - s(r, p);
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j != r) g(r, j) = std::exp(s(r, j) - lse);
    }
    g(r, p) -= 1.0;
  }
  loss /= static_cast<double>(m);
  if (!std::isfinite(loss)) throw NumericalError("contrastive loss is not finite");

  if (grad) {
    g /= static_cast<double>(m);
    const Eigen::MatrixXd dz = ((g + g.transpose()) * z) / tau;
    grad->z_a = dz.topRows(n).cast<T>();
    grad->z_b = dz.middleRows(n, n).cast<T>();
    if (blocks == 4) {
      grad->z_hn_a = dz.middleRows(2 * n, n).cast<T>();
      grad->z_hn_b = dz.bottomRows(n).cast<T>();
    } else {
      grad->z_hn_a.resize(0, dim);
      grad->z_hn_b.resize(0, dim);
    }
  }
  return loss;
}

template struct ContrastiveBatch<float>;
template struct ContrastiveBatch<double>;
template double nt_xent_loss<float>(const ContrastiveBatch<float>&, double, ContrastiveBatch<float>*);
template double nt_xent_loss<double>(const ContrastiveBatch<double>&, double, ContrastiveBatch<double>*);

}  // namespace degmon
