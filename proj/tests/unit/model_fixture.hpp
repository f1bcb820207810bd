#pragma once

#include <utility>

#include "nest/model.hpp"

namespace nest::testing {

// Runs `fn` on a model that binds the caller's parameter store directly, so a
// tape built inside writes its gradients into `store`. The store's buffers
// move into the model and back, which keeps every Parameter address stable.
template <class Fn>
Var with_store(const ModelConfig& config, ParamStore& store, Fn&& fn) {
    NestModel model(config, store);
    std::swap(model.params(), store);
    Var out = fn(model);
    std::swap(model.params(), store);
    return out;
}

}  // namespace nest::testing
