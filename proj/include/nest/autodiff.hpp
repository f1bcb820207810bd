#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nest/tensor.hpp"

namespace nest {

/// A named learnable tensor together with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
};

/// Ordered store of uniquely named parameters. Iteration follows insertion
/// order, which is also the on-disk order of checkpoints.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    Parameter& add(const std::string& name, Tensor init);
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;
    void zero_grad();

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    void rebuild_index();

    std::vector<Parameter> params_;
    std::map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Tensor& grad() const;
    Tape& tape() const { return *tape_; }
    std::uint32_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::uint32_t id_ = 0;
};

/// Reverse-mode gradient tape. Each recorded value carries a closure that
/// pushes its output gradient into its inputs. With recording disabled the
/// tape only holds values, which is what inference uses.
class Tape {
public:
    using Backward = std::function<void(const Tensor& out_grad, Tape& tape)>;

    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return record_; }

    Var constant(Tensor value);
    Var leaf(Tensor value);
    /// Binds a parameter; gradients flow back into `p.grad` on backward().
    Var param(Parameter& p);

    /// Records an op result. `backward` is dropped when no input needs a gradient.
    Var push(Tensor value, std::span<const Var> inputs, Backward backward);
    Var push(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
        return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
    }

    /// Seeds d(root)/d(root) = 1 and propagates to every reachable leaf.
    void backward(Var root);

    const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
    const Tensor& grad(std::uint32_t id) const { return nodes_[id].grad; }
    bool needs_grad(std::uint32_t id) const { return nodes_[id].needs_grad; }
    /// Adds `g` into the gradient of `id`; no-op for values that need no gradient.
    void accumulate(std::uint32_t id, const Tensor& g);
    /// Gradient buffer for `id`, allocated on first use. Only valid during backward().
    Tensor& grad_buffer(std::uint32_t id);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        Parameter* param = nullptr;
        Backward backward;
    };

    bool record_;
    std::vector<Node> nodes_;
};

}  // namespace nest
