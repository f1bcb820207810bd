#include "nest/autodiff.hpp"

#include <stdexcept>

namespace nest {

ParamStore::ParamStore(const ParamStore& other) : params_(other.params_) { rebuild_index(); }

ParamStore& ParamStore::operator=(const ParamStore& other) {
    params_ = other.params_;
    rebuild_index();
    return *this;
}

void ParamStore::rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < params_.size(); ++i) index_[params_[i].name] = i;
}

Parameter& ParamStore::add(const std::string& name, Tensor init) {
    if (contains(name)) throw std::invalid_argument("param store: duplicate name '" + name + "'");
    Tensor grad(init.shape(), 0.0);
    params_.push_back(Parameter{name, std::move(init), std::move(grad)});
    index_[name] = params_.size() - 1;
    return params_.back();
}

Parameter& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
    return params_[it->second];
}

const Parameter& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
    return params_[it->second];
}

std::size_t ParamStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, record_, nullptr, {}});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(Parameter& p) {
    nodes_.push_back(Node{p.value, {}, record_, record_ ? &p : nullptr, {}});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::push(Tensor value, std::span<const Var> inputs, Backward backward) {
    bool needs = false;
    if (record_) {
        for (const Var& in : inputs) {
            if (in.valid() && nodes_[in.id()].needs_grad) needs = true;
        }
    }
    nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backward) : Backward{}});
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor& Tape::grad_buffer(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
}

void Tape::accumulate(std::uint32_t id, const Tensor& g) {
    if (!nodes_[id].needs_grad) return;
    Tensor& buf = grad_buffer(id);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var root) {
    if (!record_) throw std::logic_error("tape: backward() on a non-recording tape");
    if (root.value().size() != 1) {
        throw std::invalid_argument("tape: backward() needs a scalar root, got " + shape_string(root.value().shape()));
    }
    for (auto& n : nodes_) n.grad = Tensor{};
    grad_buffer(root.id())[0] = 1.0;
    for (std::size_t i = root.id() + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.needs_grad || n.grad.empty()) continue;
        if (n.backward) n.backward(n.grad, *this);
        if (n.param) {
            Tensor& pg = n.param->grad;
            for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += n.grad[j];
        }
    }
}

}  // namespace nest
