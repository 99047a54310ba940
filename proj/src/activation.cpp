#include "mlmatvamp/activation.hpp"

#include <cmath>

namespace mlmv {

namespace {

Arr logistic(const Arr& x) { return 1.0 / (1.0 + (-x).exp()); }

}  // namespace

Activation Activation::softplus(double width) {
  if (!(width > 0.0)) throw Error(ErrorKind::invalid_config, "softplus width must be positive");
  Activation a(ActivationKind::softplus, "softplus:" + std::to_string(width));
  a.width_ = width;
  return a;
}

Activation Activation::custom(std::string name, Scalar1 f, Scalar1 df, Scalar1 d2f) {
  if (!f || !df || !d2f) throw Error(ErrorKind::invalid_config, "custom activation needs f, f', f''");
  Activation a(ActivationKind::custom, std::move(name));
  a.f_ = std::move(f);
  a.df_ = std::move(df);
  a.d2f_ = std::move(d2f);
  return a;
}

Activation Activation::from_name(const std::string& name) {
  if (name == "identity" || name == "linear") return identity();
  if (name == "relu") return relu();
  if (name == "sigmoid") return sigmoid();
  if (name == "tanh") return tanh();
  if (name.rfind("softplus:", 0) == 0) {
    try {
      return softplus(std::stod(name.substr(9)));
    } catch (const std::logic_error&) {
      throw Error(ErrorKind::invalid_config, "bad softplus width in '" + name + "'");
    }
  }
  throw Error(ErrorKind::invalid_config, "unknown activation '" + name + "'");
}

Arr Activation::value(const Arr& x) const {
  switch (kind_) {
    case ActivationKind::identity: return x;
    case ActivationKind::relu: return x.max(0.0);
    case ActivationKind::sigmoid: return logistic(x);
    case ActivationKind::tanh: return x.tanh();
    case ActivationKind::softplus:
      return x.max(0.0) + width_ * (-(x.abs() / width_)).exp().log1p();
    case ActivationKind::custom: return x.unaryExpr(f_);
  }
  return x;
}

Arr Activation::first(const Arr& x) const {
  switch (kind_) {
    case ActivationKind::identity: return Arr::Ones(x.rows(), x.cols());
    case ActivationKind::relu: return (x > 0.0).cast<double>();
    case ActivationKind::sigmoid: {
      const Arr s = logistic(x);
      return s * (1.0 - s);
    }
    case ActivationKind::tanh: return 1.0 - x.tanh().square();
    case ActivationKind::softplus: return logistic(x / width_);
    case ActivationKind::custom: return x.unaryExpr(df_);
  }
  return x;
}

Arr Activation::second(const Arr& x) const {
  switch (kind_) {
    case ActivationKind::identity:
    case ActivationKind::relu: return Arr::Zero(x.rows(), x.cols());
    case ActivationKind::sigmoid: {
      const Arr s = logistic(x);
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
    case ActivationKind::tanh: {
      const Arr t = x.tanh();
      return -2.0 * t * (1.0 - t.square());
    }
    case ActivationKind::softplus: {
      const Arr s = logistic(x / width_);
      return s * (1.0 - s) / width_;
    }
    case ActivationKind::custom: return x.unaryExpr(d2f_);
  }
  return x;
}

void Activation::eval(const Arr& x, Arr& v, Arr& d1) const {
  if (kind_ == ActivationKind::sigmoid) {
    v = logistic(x);
    d1 = v * (1.0 - v);
    return;
  }
  if (kind_ == ActivationKind::tanh) {
    v = x.tanh();
    d1 = 1.0 - v.square();
    return;
  }
  v = value(x);
  d1 = first(x);
}

double Activation::value(double x) const {
  Arr a(1, 1);
  a(0, 0) = x;
  return value(a)(0, 0);
}

}  // namespace mlmv
