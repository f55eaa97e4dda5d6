#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cumamba {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct TensorImpl;

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

/// One recorded primitive. `backward` receives the gradient of the node's
/// output and accumulates into the inputs that require grad.
template <typename T>
struct Node {
    std::string op;
    std::vector<ImplPtr<T>> inputs;
    std::function<void(std::span<const T>)> backward;
};

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // empty until something accumulates into it
    std::shared_ptr<Node<T>> grad_fn;

    /// Zero-initialized gradient storage, allocated on first use.
    std::span<T> grad_buffer();
    void accumulate(std::span<const T> g);
};

}  // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled();

/// Dense row-major array with optional participation in reverse-mode
/// differentiation. Copies share storage (handle semantics); use clone() for
/// a deep copy. Values of a tensor that is an input to a recorded operation
/// must not be mutated until the graph is released.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape);
    Tensor(Shape shape, T fill);
    Tensor(Shape shape, std::vector<T> values);

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
    static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t dim() const { return impl_->shape.size(); }
    std::size_t size(std::size_t axis) const;
    std::size_t numel() const { return impl_->data.size(); }

    std::span<const T> data() const { return impl_->data; }
    std::span<T> mutable_data() { return impl_->data; }
    T operator[](std::size_t i) const { return impl_->data[i]; }
    T at(std::initializer_list<std::size_t> index) const;
    T item() const;

    bool requires_grad() const { return impl_ != nullptr && impl_->requires_grad; }
    Tensor& set_requires_grad(bool on = true);
    bool is_leaf() const { return impl_->grad_fn == nullptr; }
    bool has_grad() const { return !impl_->grad.empty(); }
    /// Empty span when no gradient has been accumulated.
    std::span<const T> grad() const { return impl_->grad; }
    Tensor grad_tensor() const;
    void zero_grad();

    /// Name of the primitive that produced this tensor, empty for leaves.
    std::string op_name() const;

    Tensor clone() const;
    /// Same values, no graph history, no grad.
    Tensor detach() const;

    /// Reverse-mode pass from this scalar. Leaf gradients accumulate across
    /// calls; intermediate gradients are released as the pass proceeds.
    void backward() const;

    const detail::ImplPtr<T>& impl() const { return impl_; }
    static Tensor from_impl(detail::ImplPtr<T> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

private:
    detail::ImplPtr<T> impl_;
};

/// Topologically ordered record of the primitives reachable from a root.
/// Every node appears after the nodes producing its inputs.
template <typename T>
class Tape {
public:
    static Tape record(const Tensor<T>& root);

    std::size_t size() const { return order_.size(); }
    std::vector<std::string> op_names() const;
    /// Position of each recorded tensor, for ordering checks.
    const std::vector<detail::ImplPtr<T>>& entries() const { return order_; }

    /// Seeds d(root)/d(root) = 1 and runs every node's backward in reverse.
    void replay(const Tensor<T>& root) const;

private:
    std::vector<detail::ImplPtr<T>> order_;
};

namespace detail {

/// Records `out` as produced by `op` from `inputs`. Callers check
/// needs_graph() first so saved state is only captured when it will be used.
template <typename T>
void attach(Tensor<T>& out, const char* op, std::vector<ImplPtr<T>> inputs,
            std::function<void(std::span<const T>)> backward);

template <typename T>
bool needs_graph(std::initializer_list<const Tensor<T>*> inputs);

}  // namespace detail

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cumamba
