#include "maga/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace maga {

void ParamStore::add(const std::string& name, Tensor value) {
  if (by_name_.count(name)) throw std::invalid_argument("param already present: " + name);
  order_.push_back(name);
  by_name_.emplace(name, std::move(value));
}

void ParamStore::replace(const std::string& name, Tensor value) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::invalid_argument("unknown param: " + name);
  if (!(it->second.shape() == value.shape()))
    throw std::invalid_argument("param shape changed on replace: " + name);
  it->second = std::move(value);
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw std::invalid_argument("unknown param: " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const { return by_name_.count(name) > 0; }

ParamStore ParamStore::tracked(Graph& g) const {
  ParamStore out;
  for (const std::string& name : order_) out.add(name, g.leaf(by_name_.at(name)));
  return out;
}

void adam_step(ParamStore& params, const ParamStore& tracked_params, const Gradients& grads,
               AdamState& state) {
  const AdamConfig& c = state.config;
  state.step += 1;
  double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (const std::string& name : params.names()) {
    const Tensor& p = params.get(name);
    Tensor g = grads.at(tracked_params.get(name));
    std::vector<double>& m = state.m[name];
    std::vector<double>& v = state.v[name];
    if (m.empty()) m.assign(p.numel(), 0.0);
    if (v.empty()) v.assign(p.numel(), 0.0);
    if (m.size() != p.numel()) throw std::invalid_argument("adam state size mismatch: " + name);

    std::vector<double> next(p.numel());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      double gi = g[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      next[i] = p[i] - c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * p[i]);
    }
    params.replace(name, Tensor::from_data(p.shape(), std::move(next)));
  }
}

}  // namespace maga
