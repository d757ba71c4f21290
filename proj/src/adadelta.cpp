#include "ripeseg/train/adadelta.hpp"

#include <unordered_map>

namespace ripeseg {

Adadelta::Adadelta(ParameterStore<float>& store, AdadeltaConfig cfg) : store_(&store), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : store.parameters()) {
    sq_grad_.emplace_back(p.tensor.size(), 0.0f);
    sq_delta_.emplace_back(p.tensor.size(), 0.0f);
  }
}

void Adadelta::step() {
  auto& params = store_->parameters();
  std::vector<float> zeros;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params[i].tensor;
    std::span<const float> g;
    if (t.has_grad()) {
      g = t.grad_data();
    } else {
      zeros.assign(t.size(), 0.0f);
      g = zeros;
    }
    adadelta_update<float>(t.mutable_data(), g, sq_grad_[i], sq_delta_[i], cfg_);
  }
}

std::vector<CheckpointEntry> Adadelta::state() const {
  std::vector<CheckpointEntry> out;
  const auto& params = store_->parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    out.push_back({params[i].name + ".sq_grad", params[i].tensor.shape(), sq_grad_[i]});
    out.push_back({params[i].name + ".sq_delta", params[i].tensor.shape(), sq_delta_[i]});
  }
  return out;
}

void Adadelta::load_state(std::span<const CheckpointEntry> entries) {
  std::unordered_map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  const auto& params = store_->parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    for (auto [suffix, dst] : {std::pair{".sq_grad", &sq_grad_[i]}, std::pair{".sq_delta", &sq_delta_[i]}}) {
      const auto name = params[i].name + suffix;
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw CheckpointError("optimizer state lacks " + name);
      if (it->second->shape != params[i].tensor.shape())
        throw CheckpointError("optimizer state " + name + " has shape " + it->second->shape.str());
      *dst = it->second->data;
    }
}

}  // namespace ripeseg
