#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "seqdab/tape.hpp"
#include "seqdab/tensor.hpp"

namespace seqdab {

struct FdReport {
  double max_rel = 0.0;
  std::string worst;  // "input 2, element 17: analytic=..., numeric=..."
  bool passed = true;
};

// Central-difference check of tape gradients. `build` assembles a scalar
// loss from leaf variables over the given inputs; every element of every
// input is perturbed, so keep the tensors small. Runs in double.
template <typename BuildFn>
FdReport fd_check(std::vector<Tensor<double>> inputs, BuildFn build,
                  double h = 1e-5, double tol = 1e-3) {
  FdReport rep;

  std::vector<Tensor<double>> analytic;
  {
    Tape<double> t;
    std::vector<Var<double>> leaves;
    leaves.reserve(inputs.size());
    for (auto& in : inputs) leaves.push_back(leaf(t, in, true));
    Var<double> loss = build(t, leaves);
    t.backward(loss.id);
    for (auto& v : leaves) {
      analytic.push_back(t.has_grad(v.id) ? v.grad()
                                          : Tensor<double>(v.value().shape()));
    }
  }

  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    Tape<double> t;
    t.set_recording(false);
    std::vector<Var<double>> leaves;
    leaves.reserve(vals.size());
    for (const auto& in : vals) leaves.push_back(leaf(t, in, false));
    Var<double> loss = build(t, leaves);
    return loss.value()[0];
  };

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t e = 0; e < inputs[i].numel(); ++e) {
      const double keep = inputs[i][e];
      inputs[i][e] = keep + h;
      const double up = eval(inputs);
      inputs[i][e] = keep - h;
      const double dn = eval(inputs);
      inputs[i][e] = keep;
      const double num = (up - dn) / (2.0 * h);
      const double ana = analytic[i][e];
      const double diff = std::abs(ana - num);
      if (diff < 1e-8) continue;
      const double rel = diff / std::max(1e-6, std::abs(ana) + std::abs(num));
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.worst = "input " + std::to_string(i) + ", element " +
                    std::to_string(e) + ": analytic=" + std::to_string(ana) +
                    ", numeric=" + std::to_string(num);
      }
    }
  }
  rep.passed = rep.max_rel < tol;
  return rep;
}

}  // namespace seqdab
