#pragma once

#include "mlmatvamp/core.hpp"

#include <functional>
#include <string>

namespace mlmv {

enum class ActivationKind { identity, relu, sigmoid, tanh, softplus, custom };

// Elementwise activation with first and second derivatives, evaluated on whole arrays.
class Activation {
 public:
  using Scalar1 = std::function<double(double)>;

  Activation() : Activation(ActivationKind::identity, "identity") {}

  static Activation identity() { return Activation(ActivationKind::identity, "identity"); }
  static Activation relu() { return Activation(ActivationKind::relu, "relu"); }
  static Activation sigmoid() { return Activation(ActivationKind::sigmoid, "sigmoid"); }
  static Activation tanh() { return Activation(ActivationKind::tanh, "tanh"); }
  // s * log(1 + exp(x / s)): a smooth stand-in for relu, width s > 0.
  static Activation softplus(double width);
  static Activation custom(std::string name, Scalar1 f, Scalar1 df, Scalar1 d2f);
  // identity | relu | sigmoid | tanh | softplus:<width>
  static Activation from_name(const std::string& name);

  ActivationKind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  double width() const { return width_; }
  bool is_linear() const { return kind_ == ActivationKind::identity; }
  bool is_piecewise_linear() const { return kind_ == ActivationKind::relu || kind_ == ActivationKind::identity; }

  Arr value(const Arr& x) const;
  Arr first(const Arr& x) const;
  Arr second(const Arr& x) const;
  double value(double x) const;
  // value and first derivative in one pass
  void eval(const Arr& x, Arr& v, Arr& d1) const;

 private:
  Activation(ActivationKind kind, std::string name) : kind_(kind), name_(std::move(name)) {}

  ActivationKind kind_;
  std::string name_;
  double width_ = 1.0;
  Scalar1 f_, df_, d2f_;
};

}  // namespace mlmv
