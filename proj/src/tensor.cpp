#include "cats/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace cats {

namespace {

std::atomic<long long> g_live_elems{0};
std::atomic<long long> g_peak_elems{0};

void count_alloc(long long n) {
    const long long cur = g_live_elems.fetch_add(n) + n;
    long long peak = g_peak_elems.load();
    while (cur > peak && !g_peak_elems.compare_exchange_weak(peak, cur)) {
    }
}

thread_local bool t_grad_enabled = true;

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

TensorImpl::TensorImpl(Shape s, std::vector<Real> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match buffer of " +
                                    std::to_string(data.size()) + " elements");
    count_alloc(static_cast<long long>(data.size()));
}

TensorImpl::~TensorImpl() {
    count_alloc(-static_cast<long long>(data.size() + grad.size()));
}

void TensorImpl::ensure_grad() {
    if (grad.empty()) {
        grad.assign(data.size(), Real(0));
        count_alloc(static_cast<long long>(grad.size()));
    }
}

}  // namespace detail

long long LiveElementCounter::current() { return g_live_elems.load(); }
long long LiveElementCounter::peak() { return g_peak_elems.load(); }
void LiveElementCounter::reset_peak() { g_peak_elems.store(g_live_elems.load()); }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    Tensor t(std::make_shared<detail::TensorImpl>(std::move(shape), std::vector<Real>(n, Real(0))));
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    Tensor t(std::make_shared<detail::TensorImpl>(std::move(shape), std::vector<Real>(n, value)));
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from_vector(Shape shape, std::vector<Real> values, bool requires_grad) {
    Tensor t(std::make_shared<detail::TensorImpl>(std::move(shape), std::move(values)));
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
    return from_vector({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::size() const { return impl_->data.size(); }
std::size_t Tensor::ndim() const { return impl_->shape.size(); }

std::size_t Tensor::rows() const {
    if (impl_->shape.size() != 2)
        throw std::invalid_argument("rows(): tensor is not 2-d, shape " + shape_str(impl_->shape));
    return impl_->shape[0];
}

std::size_t Tensor::cols() const {
    if (impl_->shape.size() != 2)
        throw std::invalid_argument("cols(): tensor is not 2-d, shape " + shape_str(impl_->shape));
    return impl_->shape[1];
}

std::span<const Real> Tensor::data() const { return impl_->data; }
std::span<Real> Tensor::data_mut() { return impl_->data; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
    if (impl_->grad.empty())
        throw std::runtime_error("grad not populated for tensor " +
                                 (impl_->name.empty() ? shape_str(impl_->shape) : impl_->name));
    return impl_->grad;
}

std::span<Real> Tensor::grad_mut() {
    impl_->ensure_grad();
    return impl_->grad;
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}

const std::string& Tensor::name() const { return impl_->name; }

Tensor& Tensor::set_name(std::string name) {
    impl_->name = std::move(name);
    return *this;
}

Real Tensor::item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(size()) + " elements");
    return impl_->data[0];
}

Real Tensor::at(std::size_t i) const { return impl_->data.at(i); }

Real Tensor::at(std::size_t r, std::size_t c) const { return impl_->data.at(r * cols() + c); }

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
    impl_->backward_run = false;
}

void Tensor::backward() {
    auto& root = *impl_;
    if (root.size() != 1)
        throw std::invalid_argument("backward(): loss must be scalar, got shape " + shape_str(root.shape));
    if (!root.backward_fn)
        throw std::runtime_error("backward(): no recorded operations lead to this tensor");
    if (root.backward_run)
        throw std::runtime_error("backward(): already run on this record; build a new forward pass first");
    root.backward_run = true;

    // Iterative post-order DFS gives a topological order; replaying it in
    // reverse visits every node after all its consumers, so each node pushes
    // its fully-accumulated grad to its parents exactly once.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    struct Frame {
        detail::TensorImpl* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack{{&root, 0}};
    seen.insert(&root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::TensorImpl* p = f.node->parents[f.next_parent++].get();
            if (p->backward_fn && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    root.ensure_grad();
    root.grad[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* node = *it;
        node->backward_fn(*node);
    }
}

Tensor Tensor::clone() const {
    Tensor t(std::make_shared<detail::TensorImpl>(impl_->shape, impl_->data));
    t.impl_->requires_grad = impl_->requires_grad;
    t.impl_->name = impl_->name;
    return t;
}

Tensor Tensor::detach() const {
    Tensor t(std::make_shared<detail::TensorImpl>(impl_->shape, impl_->data));
    return t;
}

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

bool grad_enabled() { return t_grad_enabled; }

bool all_finite(std::span<const Real> xs) {
    for (Real v : xs)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace cats
