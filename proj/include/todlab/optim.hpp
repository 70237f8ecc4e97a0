#pragma once

#include <cmath>
#include <vector>

#include "todlab/common.hpp"
#include "todlab/mat.hpp"

namespace todlab {

// Linear learning-rate schedule: optional warmup to 1, then decay towards
// zero at total_steps. step counts completed optimizer steps (0-based).
inline double linear_lr_scale(long step, long total_steps, long warmup_steps) {
  check(total_steps >= 1, "linear_lr_scale: total_steps must be >= 1");
  check(warmup_steps >= 0 && warmup_steps < total_steps,
        "linear_lr_scale: warmup_steps out of range");
  if (step >= total_steps) return 0.0;
  if (step < warmup_steps) return double(step + 1) / double(warmup_steps);
  return double(total_steps - step) / double(total_steps - warmup_steps);
}

// Adam over externally owned (weight, gradient) tensor pairs. Moments update
// in the scalar type; the parameter update itself runs in double so float
// training does not lose the tiny step sizes of late training.
template <class S>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    check(lr > 0, "Adam: lr must be positive");
    check(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam: bad betas");
  }

  void add(Mat<S>* w, Mat<S>* g) {
    check(w && g && w->same_shape(*g), "Adam::add: bad tensor pair");
    slots_.push_back({w, g, Mat<S>(w->rows(), w->cols()), Mat<S>(w->rows(), w->cols())});
  }

  std::size_t tensor_count() const { return slots_.size(); }
  long steps_taken() const { return t_; }

  void zero_grads() {
    for (auto& s : slots_) s.g->set_zero();
  }

  // One update with the given schedule scale. Throws if any parameter goes
  // non-finite; training must never continue past that point.
  void step(double lr_scale = 1.0) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_));
    const double c2 = 1.0 - std::pow(b2_, double(t_));
    const double lr = lr_ * lr_scale;
    for (auto& s : slots_) {
      for (std::size_t i = 0; i < s.w->size(); ++i) {
        const double gi = double(s.g->data()[i]);
        const double m = b1_ * double(s.m.data()[i]) + (1.0 - b1_) * gi;
        const double v = b2_ * double(s.v.data()[i]) + (1.0 - b2_) * gi * gi;
        s.m.data()[i] = S(m);
        s.v.data()[i] = S(v);
        const double upd = lr * (m / c1) / (std::sqrt(v / c2) + eps_);
        const double wi = double(s.w->data()[i]) - upd;
        check(std::isfinite(wi), "Adam::step: non-finite parameter update");
        s.w->data()[i] = S(wi);
      }
    }
  }

 private:
  struct Slot {
    Mat<S>* w;
    Mat<S>* g;
    Mat<S> m, v;
  };
  std::vector<Slot> slots_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace todlab
