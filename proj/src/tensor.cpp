#include "cumamba/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace cumamba {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_mode_enabled() { return g_grad_enabled; }

namespace detail {

template <typename T>
std::span<T> TensorImpl<T>::grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
}

template <typename T>
void TensorImpl<T>::accumulate(std::span<const T> g) {
    auto dst = grad_buffer();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

template <typename T>
void attach(Tensor<T>& out, const char* op, std::vector<ImplPtr<T>> inputs,
            std::function<void(std::span<const T>)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->op = op;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl()->requires_grad = true;
    out.impl()->grad_fn = std::move(node);
}

template <typename T>
bool needs_graph(std::initializer_list<const Tensor<T>*> inputs) {
    if (!g_grad_enabled) return false;
    for (const Tensor<T>* t : inputs)
        if (t != nullptr && t->defined() && t->requires_grad()) return true;
    return false;
}

template struct TensorImpl<float>;
template struct TensorImpl<double>;
template void attach<float>(Tensor<float>&, const char*, std::vector<ImplPtr<float>>,
                            std::function<void(std::span<const float>)>);
template void attach<double>(Tensor<double>&, const char*, std::vector<ImplPtr<double>>,
                             std::function<void(std::span<const double>)>);
template bool needs_graph<float>(std::initializer_list<const Tensor<float>*>);
template bool needs_graph<double>(std::initializer_list<const Tensor<double>*>);

}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape) : Tensor(std::move(shape), T(0)) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

template <typename T>
std::size_t Tensor<T>::size(std::size_t axis) const {
    if (axis >= dim()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape()));
    }
    return impl_->shape[axis];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != dim()) throw ShapeError("index rank does not match " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= impl_->shape[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
        flat = flat * impl_->shape[axis] + i;
        ++axis;
    }
    return impl_->data[flat];
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
    if (!has_grad()) return Tensor(shape());
    return Tensor(shape(), impl_->grad);
}

template <typename T>
void Tensor<T>::zero_grad() {
    impl_->grad.clear();
}

template <typename T>
std::string Tensor<T>::op_name() const {
    return impl_->grad_fn ? impl_->grad_fn->op : std::string();
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    Tensor out(shape(), impl_->data);
    out.impl_->requires_grad = impl_->requires_grad && is_leaf();
    return out;
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(shape(), impl_->data);
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(shape()));
    }
    if (!requires_grad()) {
        throw std::logic_error("backward() on a tensor that does not require grad");
    }
    Tape<T>::record(*this).replay(*this);
}

template <typename T>
Tape<T> Tape<T>::record(const Tensor<T>& root) {
    Tape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    // Iterative post-order DFS yields a topological order.
    std::unordered_set<const detail::TensorImpl<T>*> seen;
    struct Frame {
        detail::ImplPtr<T> impl;
        std::size_t next_input;
    };
    std::vector<Frame> stack;
    stack.push_back({root.impl(), 0});
    seen.insert(root.impl().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        const auto& node = f.impl->grad_fn;
        if (node && f.next_input < node->inputs.size()) {
            detail::ImplPtr<T> in = node->inputs[f.next_input++];
            if (in && in->requires_grad && seen.insert(in.get()).second) stack.push_back({in, 0});
            continue;
        }
        tape.order_.push_back(f.impl);
        stack.pop_back();
    }
    return tape;
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
    std::vector<std::string> names;
    names.reserve(order_.size());
    for (const auto& impl : order_) names.push_back(impl->grad_fn ? impl->grad_fn->op : "leaf");
    return names;
}

template <typename T>
void Tape<T>::replay(const Tensor<T>& root) const {
    if (order_.empty()) return;
    root.impl()->grad_buffer()[0] += T(1);
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        detail::TensorImpl<T>& impl = **it;
        if (!impl.grad_fn) continue;
        if (!impl.grad.empty()) impl.grad_fn->backward(impl.grad);
        // Intermediate gradients are not kept.
        std::vector<T>().swap(impl.grad);
    }
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace cumamba
