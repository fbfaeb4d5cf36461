#pragma once

#include <cstring>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "olc/conv.hpp"

namespace olc {

// Named view over the parameters of a network, used by optimizers,
// checkpoints and freeze/checksum helpers.
template <typename S>
struct ParamRegistry {
  std::vector<std::pair<std::string, Param<S>*>> items;

  void add(const std::string& name, Param<S>& p) {
    for (auto& [n, _] : items)
      check_arg(n != name, "ParamRegistry: duplicate name " + name);
    items.emplace_back(name, &p);
  }

  void merge(const ParamRegistry& other, const std::string& prefix) {
    for (auto& [n, p] : other.items) add(prefix + n, *p);
  }

  std::vector<Param<S>*> params() const {
    std::vector<Param<S>*> out;
    out.reserve(items.size());
    for (auto& [_, p] : items) out.push_back(p);
    return out;
  }

  void freeze_all() {
    for (auto& [_, p] : items) p->frozen = true;
  }

  void zero_grad() {
    for (auto& [_, p] : items) p->zero_grad();
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (auto& [_, p] : items) n += std::size_t(p->value.size());
    return n;
  }
};

// FNV-1a over the raw value bytes; order follows registration.
template <typename S>
std::uint64_t param_checksum(const ParamRegistry<S>& reg) {
  std::uint64_t hash = 1469598103934665603ull;
  for (auto& [_, p] : reg.items) {
    const auto* bytes =
        reinterpret_cast<const unsigned char*>(p->value.data.data());
    const std::size_t n = std::size_t(p->value.size()) * sizeof(S);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 1099511628211ull;
    }
  }
  return hash;
}

template <typename S>
struct Conv2dLayer {
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1;
  Param<S> w, b;

  Conv2dLayer() = default;
  Conv2dLayer(int cin_, int cout_, int k_, int stride_, int pad_)
      : cin(cin_), cout(cout_), k(k_), stride(stride_), pad(pad_) {
    w = Param<S>(Tensor<S>(k, k, cin * cout));
    b = Param<S>(Tensor<S>(1, 1, cout));
  }

  void init_he(Rng& rng, S gain = S(1)) {
    const double fan_in = double(k) * k * cin;
    const double stddev = double(gain) * std::sqrt(2.0 / fan_in);
    std::normal_distribution<double> d(0.0, stddev);
    for (std::int64_t i = 0; i < w.value.size(); ++i)
      w.value.data[i] = S(d(rng));
    b.value.data.setZero();
  }

  void init_zero() {
    w.value.data.setZero();
    b.value.data.setZero();
  }

  Var operator()(Tape<S>& t, Var x) {
    return conv2d(t, x, t.param(w), t.param(b), cin, cout, k, stride, pad);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".w", w);
    reg.add(prefix + ".b", b);
  }
};

template <typename S>
struct GroupNormLayer {
  int c = 0, groups = 1;
  Param<S> gamma, beta;

  GroupNormLayer() = default;
  explicit GroupNormLayer(int c_) : c(c_) {
    groups = (c % 8 == 0) ? 8 : (c % 4 == 0 ? 4 : (c % 2 == 0 ? 2 : 1));
    gamma = Param<S>(Tensor<S>::full(1, 1, c, S(1)));
    beta = Param<S>(Tensor<S>(1, 1, c));
  }

  Var operator()(Tape<S>& t, Var x) {
    return group_norm(t, x, t.param(gamma), t.param(beta), groups);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    reg.add(prefix + ".gamma", gamma);
    reg.add(prefix + ".beta", beta);
  }
};

// Pre-activation residual block: GN-SiLU-conv, GN-SiLU-conv, skip
// (1x1 projection when the channel count changes).
template <typename S>
struct ResBlock {
  int cin = 0, cout = 0;
  GroupNormLayer<S> norm1, norm2;
  Conv2dLayer<S> conv1, conv2, proj;

  ResBlock() = default;
  ResBlock(int cin_, int cout_, Rng& rng) : cin(cin_), cout(cout_) {
    norm1 = GroupNormLayer<S>(cin);
    conv1 = Conv2dLayer<S>(cin, cout, 3, 1, 1);
    norm2 = GroupNormLayer<S>(cout);
    conv2 = Conv2dLayer<S>(cout, cout, 3, 1, 1);
    conv1.init_he(rng);
    conv2.init_he(rng);
    if (cin != cout) {
      proj = Conv2dLayer<S>(cin, cout, 1, 1, 0);
      proj.init_he(rng);
    }
  }

  Var operator()(Tape<S>& t, Var x) {
    Var h = conv1(t, silu(t, norm1(t, x)));
    h = conv2(t, silu(t, norm2(t, h)));
    Var skip = (cin == cout) ? x : proj(t, x);
    return add(t, skip, h);
  }

  void register_params(ParamRegistry<S>& reg, const std::string& prefix) {
    norm1.register_params(reg, prefix + ".norm1");
    conv1.register_params(reg, prefix + ".conv1");
    norm2.register_params(reg, prefix + ".norm2");
    conv2.register_params(reg, prefix + ".conv2");
    if (cin != cout) proj.register_params(reg, prefix + ".proj");
  }
};

template <typename S>
class Adam {
 public:
  explicit Adam(S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void attach(const ParamRegistry<S>& reg) {
    for (auto& [_, p] : reg.items) {
      State st;
      st.p = p;
      st.m = Tensor<S>::Array::Zero(p->value.size());
      st.v = Tensor<S>::Array::Zero(p->value.size());
      states_.push_back(std::move(st));
    }
  }

  void zero_grad() {
    for (auto& st : states_) st.p->zero_grad();
  }

  void step() {
    ++t_;
    const S bc1 = S(1) - S(std::pow(double(beta1_), double(t_)));
    const S bc2 = S(1) - S(std::pow(double(beta2_), double(t_)));
    for (auto& st : states_) {
      if (st.p->frozen) continue;
      const auto& g = st.p->grad.data;
      st.m = beta1_ * st.m + (S(1) - beta1_) * g;
      st.v = beta2_ * st.v + (S(1) - beta2_) * g.square();
      st.p->value.data -=
          lr_ * (st.m / bc1) / ((st.v / bc2).sqrt() + eps_);
    }
  }

  S learning_rate() const { return lr_; }

 private:
  struct State {
    Param<S>* p = nullptr;
    typename Tensor<S>::Array m, v;
  };
  S lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<State> states_;
};

}  // namespace olc
