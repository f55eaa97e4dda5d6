#include "cumamba/module.hpp"

#include <cmath>

namespace cumamba {

template <typename T>
std::vector<NamedParam<T>> Module<T>::parameters() const {
    std::vector<NamedParam<T>> out;
    collect("", out);
    return out;
}

template <typename T>
std::size_t Module<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

template <typename T>
void Module<T>::zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
}

template <typename T>
Tensor<T> Module<T>::add_param(std::string name, Tensor<T> value, bool decay) {
    value.set_requires_grad(true);
    params_.push_back({std::move(name), value, decay});
    return value;
}

template <typename T>
void Module<T>::add_child(std::string name, Module* child) {
    children_.emplace_back(std::move(name), child);
}

template <typename T>
void Module<T>::collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const {
    for (const auto& p : params_) out.push_back({prefix + p.name, p.tensor, p.decay});
    for (const auto& [name, child] : children_) child->collect(prefix + name + ".", out);
}

template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, InitRng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> t(std::move(shape));
    for (T& v : t.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template class Module<float>;
template class Module<double>;
template Tensor<float> fan_in_uniform<float>(Shape, std::size_t, InitRng&);
template Tensor<double> fan_in_uniform<double>(Shape, std::size_t, InitRng&);

}  // namespace cumamba
