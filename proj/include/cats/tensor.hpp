#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cats/common.hpp"

namespace cats {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // empty until first use
    bool requires_grad = false;
    bool backward_run = false;
    std::string name;

    // Dynamic per-forward record: parents plus the rule that pushes this
    // node's grad into them. Rebuilt from scratch on every forward pass.
    std::vector<std::shared_ptr<TensorImpl>> parents;
    std::function<void(TensorImpl&)> backward_fn;

    TensorImpl(Shape s, std::vector<Real> d);
    ~TensorImpl();
    TensorImpl(const TensorImpl&) = delete;
    TensorImpl& operator=(const TensorImpl&) = delete;

    std::size_t size() const { return data.size(); }
    void ensure_grad();
};

}  // namespace detail

// Peak live element count across all tensors (data + grad buffers); the
// memory proxy reported by the efficiency harness.
struct LiveElementCounter {
    static long long current();
    static long long peak();
    static void reset_peak();
};

// Shared-ownership handle over a dense row-major tensor. Copies alias the
// same storage; use clone() for a deep copy.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor from_vector(Shape shape, std::vector<Real> values, bool requires_grad = false);
    static Tensor scalar(Real value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t size() const;
    std::size_t ndim() const;
    // 2-d helpers (most of the model works on [rows x cols] matrices).
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const Real> data() const;
    std::span<Real> data_mut();
    bool has_grad() const;
    std::span<const Real> grad() const;
    std::span<Real> grad_mut();

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    const std::string& name() const;
    Tensor& set_name(std::string name);

    Real item() const;
    Real at(std::size_t i) const;
    Real at(std::size_t r, std::size_t c) const;

    void zero_grad();
    // Reverse-mode sweep from a scalar; populates grad on every
    // requires_grad tensor reachable through the record. A second call on
    // the same record is an error.
    void backward();

    Tensor clone() const;
    // Same data, no history; used to make evaluation copies of parameters.
    Tensor detach() const;

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

// Scoped switch that disables graph recording (evaluation paths).
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

bool grad_enabled();

bool all_finite(std::span<const Real> xs);

}  // namespace cats
