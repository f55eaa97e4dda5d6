#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cumamba/tensor.hpp"

namespace cumamba {

template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
    bool decay = true;  // false for biases and norm gains
};

/// Owner of named trainable tensors and of child modules. Parameter names are
/// dotted paths ("enc0.block0.spatial.norm.gamma"), stable across runs, and
/// double as checkpoint keys.
template <typename T>
class Module {
public:
    Module() = default;
    virtual ~Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    /// All parameters of this module and its children, in registration order.
    std::vector<NamedParam<T>> parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();

protected:
    /// Registers a leaf that requires grad and returns the stored handle.
    Tensor<T> add_param(std::string name, Tensor<T> value, bool decay);
    void add_child(std::string name, Module* child);

private:
    void collect(const std::string& prefix, std::vector<NamedParam<T>>& out) const;

    std::vector<NamedParam<T>> params_;
    std::vector<std::pair<std::string, Module*>> children_;
};

/// Seeded source for parameter initialization.
class InitRng {
public:
    explicit InitRng(std::uint64_t seed) : engine_(seed) {}
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Values uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, InitRng& rng);

extern template class Module<float>;
extern template class Module<double>;

}  // namespace cumamba
