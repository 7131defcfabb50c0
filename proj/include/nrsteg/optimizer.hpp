#pragma once

// AdaDelta with a learning-rate multiplier on the update and L2 weight decay
// restricted to conv/fc weights.

#include <cmath>
#include <string>

#include "nrsteg/model.hpp"

namespace nrsteg {

struct AdaDeltaConfig {
  double lr = 0.4;
  double rho = 0.95;
  double eps = 1e-8;
  double weight_decay = 5e-4;

  void validate() const {
    if (!(lr > 0)) throw ValidationError("lr must be positive");
    if (!(rho > 0 && rho < 1)) throw ValidationError("rho must lie in (0,1)");
    if (!(eps > 0)) throw ValidationError("eps must be positive");
    if (!(weight_decay >= 0)) throw ValidationError("weight_decay must be nonnegative");
  }
};

// Running averages E[g^2] and E[dx^2], one per trainable tensor, zero-initialized.
template <typename Scalar>
struct OptState {
  Model<Scalar> square_avg;
  Model<Scalar> delta_avg;

  static OptState fresh(const Model<Scalar>& m) { return {zeros_like(m), zeros_like(m)}; }
};

/// Applies one AdaDelta step in place:
///   g   <- grad + weight_decay * param             (weights only)
///   Eg2 <- rho Eg2 + (1 - rho) g^2
///   dx  <- -sqrt(Edx2 + eps) / sqrt(Eg2 + eps) * g
///   Edx2 <- rho Edx2 + (1 - rho) dx^2
///   param <- param + lr * dx
/// A non-finite gradient aborts with the offending tensor name before anything is modified.
template <typename Scalar>
void adadelta_step(Model<Scalar>& params, const Model<Scalar>& grads, OptState<Scalar>& state,
                   const AdaDeltaConfig& cfg) {
  for_each_tensor(
      [](const std::string& name, ParamRole, const std::vector<std::uint32_t>&, const Vector<Scalar>& g) {
        if (!g.allFinite()) throw ValidationError("non-finite gradient in " + name);
      },
      grads);
  const Scalar rho = Scalar(cfg.rho), eps = Scalar(cfg.eps), lr = Scalar(cfg.lr), wd = Scalar(cfg.weight_decay);
  for_each_tensor(
      [&](const std::string&, ParamRole role, const std::vector<std::uint32_t>&, Vector<Scalar>& p,
          const Vector<Scalar>& g, Vector<Scalar>& eg2, Vector<Scalar>& edx2) {
        if (!is_trainable(role)) return;
        Vector<Scalar> grad = g;
        if (is_decayed(role) && wd != Scalar(0)) grad += wd * p;
        eg2.array() = rho * eg2.array() + (Scalar(1) - rho) * grad.array().square();
        const Vector<Scalar> dx =
            (-((edx2.array() + eps).sqrt() / (eg2.array() + eps).sqrt()) * grad.array()).matrix();
        edx2.array() = rho * edx2.array() + (Scalar(1) - rho) * dx.array().square();
        p += lr * dx;
      },
      params, grads, state.square_avg, state.delta_avg);
}

}  // namespace nrsteg
