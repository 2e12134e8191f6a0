#include "expertmatch/nn/network.hpp"

#include "expertmatch/error.hpp"

namespace em::nn {

namespace {

template <typename... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <typename... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

}  // namespace

void Network::set_mode(Mode mode) {
  for (auto& l : layers_) {
    if (auto* bn = std::get_if<BatchNorm1d>(&l)) bn->set_mode(mode);
  }
}

Matrix Network::forward(const Matrix& input) {
  Matrix x = input;
  for (auto& l : layers_) {
    x = std::visit([&](auto& layer) { return layer.forward(x); }, l);
  }
  return x;
}

Matrix Network::backward(const Matrix& grad_out) {
  Matrix g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    g = std::visit([&](auto& layer) { return layer.backward(g); }, *it);
  }
  return g;
}

Matrix Network::infer(const Matrix& input, std::size_t begin, std::size_t end) const {
  if (begin > end || end > layers_.size()) fail(ErrorCode::kInvalidArgument, "infer: bad layer range");
  Matrix x = input;
  for (std::size_t i = begin; i < end; ++i) {
    x = std::visit([&](const auto& layer) { return layer.infer(x); }, layers_[i]);
  }
  return x;
}

void Network::zero_grad() {
  for (auto& l : layers_) {
    std::visit(Overloaded{[](DenseLayer& d) { d.zero_grad(); },
                          [](BatchNorm1d& b) { b.zero_grad(); }, [](Activation&) {}},
               l);
  }
}

void Network::clear_caches() {
  for (auto& l : layers_) std::visit([](auto& layer) { layer.clear_cache(); }, l);
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> out;
  for (auto& l : layers_) {
    std::visit(Overloaded{[&](DenseLayer& d) {
                            auto p = d.parameters();
                            out.insert(out.end(), p.begin(), p.end());
                          },
                          [&](BatchNorm1d& b) {
                            auto p = b.parameters();
                            out.insert(out.end(), p.begin(), p.end());
                          },
                          [](Activation&) {}},
               l);
  }
  return out;
}

bool operator==(const Network& a, const Network& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& la = a.layers_[i];
    const auto& lb = b.layers_[i];
    if (la.index() != lb.index()) return false;
    const bool same = std::visit(
        Overloaded{[&](const DenseLayer& d) {
                     const auto& e = std::get<DenseLayer>(lb);
                     return d.weights() == e.weights() && d.bias() == e.bias();
                   },
                   [&](const BatchNorm1d& n) {
                     const auto& m = std::get<BatchNorm1d>(lb);
                     return n.gamma() == m.gamma() && n.beta() == m.beta() &&
                            n.running_mean() == m.running_mean() &&
                            n.running_var() == m.running_var() && n.momentum() == m.momentum() &&
                            n.epsilon() == m.epsilon();
                   },
                   [&](const Activation& act) {
                     return act.kind() == std::get<Activation>(lb).kind();
                   }},
        la);
    if (!same) return false;
  }
  return true;
}

}  // namespace em::nn
