#pragma once

#include <cmath>
#include <vector>

#include "todlab/common.hpp"
#include "todlab/mat.hpp"

namespace todlab {

// Indices of the layers whose pooled states enter the distillation loss: the
// top k of total layers. k <= 0 means all layers; k larger than the stack is
// clamped.
inline std::vector<int> top_k_layers(int total, int k) {
  check(total >= 1, "top_k_layers: no layers");
  const int used = (k <= 0 || k > total) ? total : k;
  std::vector<int> out;
  for (int l = total - used; l < total; ++l) out.push_back(l);
  return out;
}

// Plain-value counterpart of the tape loss: sum over the selected layers of
// the Euclidean distance between student and teacher pooled states.
template <class S>
double distill_loss_value(const std::vector<Mat<S>>& student_pooled,
                          const std::vector<Mat<S>>& teacher_pooled, int top_k,
                          bool normalize = false) {
  check(student_pooled.size() == teacher_pooled.size(),
        "distill_loss_value: layer count mismatch");
  double total = 0;
  for (int l : top_k_layers(int(student_pooled.size()), top_k)) {
    const auto& hs = student_pooled[std::size_t(l)];
    const auto& ht = teacher_pooled[std::size_t(l)];
    check(hs.same_shape(ht), "distill_loss_value: shape mismatch");
    double s = 0;
    if (normalize) {
      const double ns = std::max(double(l2_norm(hs)), 1e-30);
      const double nt = std::max(double(l2_norm(ht)), 1e-30);
      for (std::size_t i = 0; i < hs.size(); ++i) {
        const double d = double(hs.data()[i]) / ns - double(ht.data()[i]) / nt;
        s += d * d;
      }
    } else {
      for (std::size_t i = 0; i < hs.size(); ++i) {
        const double d = double(hs.data()[i]) - double(ht.data()[i]);
        s += d * d;
      }
    }
    total += std::sqrt(s);
  }
  return total;
}

// Summed negative log-likelihood of the original tokens at masked positions.
// labels[i] < 0 means position i was not masked.
template <class S>
double mlm_loss_value(const Mat<S>& logits, const std::vector<int>& labels) {
  check(int(labels.size()) >= logits.rows(), "mlm_loss_value: labels too short");
  double loss = 0;
  for (int r = 0; r < logits.rows(); ++r) {
    const int t = labels[std::size_t(r)];
    if (t < 0) continue;
    check(t < logits.cols(), "mlm_loss_value: label out of range");
    double mx = double(logits(r, 0));
    for (int c = 1; c < logits.cols(); ++c) mx = std::max(mx, double(logits(r, c)));
    double sum = 0;
    for (int c = 0; c < logits.cols(); ++c) sum += std::exp(double(logits(r, c)) - mx);
    loss += std::log(sum) + mx - double(logits(r, t));
  }
  return loss;
}

}  // namespace todlab
