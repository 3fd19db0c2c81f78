#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "gradshield/tensor.hpp"

namespace gradshield {

/// SGD with heavy-ball momentum: v ← μv + g; p ← p − lr·v.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  void step(std::map<std::string, Tensor>& params, const std::map<std::string, Tensor>& grads) {
    for (auto& [name, p] : params) {
      auto it = grads.find(name);
      if (it == grads.end()) continue;
      const Tensor& g = it->second;
      if (g.shape() != p.shape()) throw ShapeError("sgd: gradient shape mismatch for " + name);
      auto [vit, inserted] = velocity_.try_emplace(name, p.shape());
      Tensor& v = vit->second;
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i];
        p[i] -= lr_ * v[i];
      }
    }
  }

  double lr() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  double lr_;
  double momentum_;
  std::map<std::string, Tensor> velocity_;
};

}  // namespace gradshield
