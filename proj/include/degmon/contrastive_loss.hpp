#pragma once

#include "degmon/tensor.hpp"

namespace degmon {

/// Embeddings of one training batch, N_B rows per block. Hard-negative blocks
/// may be left empty, in which case the loss is the two-view NT-Xent.
template <typename T>
struct ContrastiveBatch {
  RowMatrix<T> z_a;
  RowMatrix<T> z_b;
  RowMatrix<T> z_hn_a;
  RowMatrix<T> z_hn_b;

  bool has_hard_negatives() const { return z_hn_a.rows() > 0 || z_hn_b.rows() > 0; }
  int size() const { return static_cast<int>(z_a.rows()); }
  void validate() const;
};

/// Mean over all anchors of -log(exp(s_pos) / sum_{j != anchor} exp(s_j)) with
/// s = cos / tau. Views A_i and B_i are positives, as are the hard negatives
/// of A_i and B_i; every other embedding in the batch is a negative. When
/// `grad` is non-null it receives dL/dz with the same block layout.
template <typename T>
double nt_xent_loss(const ContrastiveBatch<T>& batch, double tau, ContrastiveBatch<T>* grad = nullptr);

}  // namespace degmon
