#pragma once

#include <limits>
#include <vector>

#include "seqdab/errors.hpp"
#include "seqdab/tensor.hpp"

namespace seqdab {

// Momentum SGD with weight decay folded into the velocity:
//   v <- momentum*v + g + wd*p;  p <- p - lr*v.
template <typename S>
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }

  // One update for parameter slot i. Empty gradients (parameters outside
  // the loss graph) leave the parameter untouched.
  void step(std::size_t i, Tensor<S>& param, const Tensor<S>& grad) {
    if (grad.empty()) return;
    check_shape(grad.same_shape(param), "sgd gradient shape mismatch");
    if (!grad.all_finite()) throw NumericError("non-finite gradient");
    if (velocity_.size() <= i) velocity_.resize(i + 1);
    Tensor<S>& v = velocity_[i];
    if (v.empty()) v = Tensor<S>(param.shape());
    v.map() = static_cast<S>(momentum_) * v.map() + grad.map() +
              static_cast<S>(weight_decay_) * param.map();
    param.map() -= static_cast<S>(lr_) * v.map();
  }

  std::vector<Tensor<S>>& velocity() { return velocity_; }
  const std::vector<Tensor<S>>& velocity() const { return velocity_; }

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<Tensor<S>> velocity_;
};

// Multiplies the learning rate by `factor` after `patience` consecutive
// epochs without the validation loss improving by more than `min_delta`.
class PlateauScheduler {
 public:
  PlateauScheduler(double factor = 0.1, int patience = 3,
                   double min_delta = 1e-3)
      : factor_(factor), patience_(patience), min_delta_(min_delta) {}

  // Returns true when this observation triggered a decay.
  bool observe(double val_loss, double* lr) {
    if (val_loss < best_ - min_delta_) {
      best_ = val_loss;
      bad_ = 0;
      return false;
    }
    if (++bad_ >= patience_) {
      *lr *= factor_;
      bad_ = 0;
      return true;
    }
    return false;
  }

  double best() const { return best_; }
  int bad_epochs() const { return bad_; }
  void restore(double best, int bad) {
    best_ = best;
    bad_ = bad;
  }

 private:
  double factor_;
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

}  // namespace seqdab
