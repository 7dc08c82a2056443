#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "gshdr/common.hpp"

namespace gshdr {

namespace detail {

template <typename T>
struct TensorStorage {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until first use
    bool requires_grad = false;
};

}  // namespace detail

// Shared-storage tensor handle. Copying a Tensor aliases the same buffer;
// clone() makes a deep copy. Gradient buffers are allocated lazily.
template <typename T>
class Tensor {
public:
    using Storage = detail::TensorStorage<T>;

    Tensor() = default;

    explicit Tensor(const Shape& shape, T fill = T(0))
        : s_(std::make_shared<Storage>()) {
        s_->shape = shape;
        s_->data.assign(static_cast<std::size_t>(shape.numel()), fill);
    }

    static Tensor zeros(const Shape& shape) { return Tensor(shape, T(0)); }
    static Tensor full(const Shape& shape, T v) { return Tensor(shape, v); }

    static Tensor from(const Shape& shape, std::vector<T> values) {
        if (static_cast<std::int64_t>(values.size()) != shape.numel())
            fail(ErrorKind::Shape, "value count " + std::to_string(values.size()) +
                                       " does not match shape " + shape.str());
        Tensor t;
        t.s_ = std::make_shared<Storage>();
        t.s_->shape = shape;
        t.s_->data = std::move(values);
        return t;
    }

    bool defined() const noexcept { return s_ != nullptr; }
    const Shape& shape() const { return s_->shape; }
    int rank() const { return s_->shape.rank(); }
    std::int64_t dim(int i) const { return s_->shape[i]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(s_->data.size()); }

    T* data() { return s_->data.data(); }
    const T* data() const { return s_->data.data(); }

    // Flat element access plus rank-specific helpers used mostly by tests.
    T& operator[](std::int64_t i) { return s_->data[static_cast<std::size_t>(i)]; }
    T operator[](std::int64_t i) const { return s_->data[static_cast<std::size_t>(i)]; }

    T& at(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) {
        const Shape& s = s_->shape;
        return (*this)[((b * s[1] + c) * s[2] + y) * s[3] + x];
    }
    T at(std::int64_t b, std::int64_t c, std::int64_t y, std::int64_t x) const {
        const Shape& s = s_->shape;
        return (*this)[((b * s[1] + c) * s[2] + y) * s[3] + x];
    }
    T& at(std::int64_t i, std::int64_t j, std::int64_t k) {
        const Shape& s = s_->shape;
        return (*this)[(i * s[1] + j) * s[2] + k];
    }
    T at(std::int64_t i, std::int64_t j, std::int64_t k) const {
        const Shape& s = s_->shape;
        return (*this)[(i * s[1] + j) * s[2] + k];
    }
    T& at(std::int64_t i, std::int64_t j) { return (*this)[i * s_->shape[1] + j]; }
    T at(std::int64_t i, std::int64_t j) const { return (*this)[i * s_->shape[1] + j]; }

    T item() const {
        if (numel() != 1) fail(ErrorKind::Shape, "item() requires a scalar tensor");
        return s_->data[0];
    }

    bool requires_grad() const { return s_ && s_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        s_->requires_grad = v;
        return *this;
    }

    bool has_grad() const { return s_ && !s_->grad.empty(); }
    T* grad() { return s_->grad.data(); }
    const T* grad() const { return s_->grad.data(); }

    void ensure_grad() {
        if (s_->grad.empty()) s_->grad.assign(s_->data.size(), T(0));
    }
    void zero_grad() {
        if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), T(0));
    }

    Tensor clone() const {
        Tensor t;
        t.s_ = std::make_shared<Storage>();
        t.s_->shape = s_->shape;
        t.s_->data = s_->data;
        return t;
    }

    bool same_storage(const Tensor& o) const { return s_ == o.s_; }

    bool all_finite() const {
        for (const T v : s_->data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    std::shared_ptr<Storage> storage() const { return s_; }

private:
    std::shared_ptr<Storage> s_;
};

// Record of executed primitives for one forward pass. Nodes are appended in
// execution order, which is a topological order of the data flow; backward
// replays them in exact reverse. Single-writer: one forward/backward pair at
// a time per instance.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // RAII activation: primitives record onto the innermost active tape of
    // the current thread.
    class Scope {
    public:
        explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
        ~Scope() { active_ = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active() noexcept { return active_; }

    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays the recorded nodes in reverse,
    // accumulating into the grad buffer of every tensor that requires one.
    void backward(Tensor<T> loss) {
        if (loss.numel() != 1) fail(ErrorKind::Value, "backward requires a scalar loss");
        if (consumed_) fail(ErrorKind::State, "backward already run on this graph; record a new forward first");
        if (!loss.requires_grad())
            fail(ErrorKind::State, "loss does not require grad; was the forward recorded on this tape?");
        consumed_ = true;
        loss.ensure_grad();
        loss.grad()[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

    void clear() {
        nodes_.clear();
        consumed_ = false;
    }

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
    static thread_local Tape* active_;
};

template <typename T>
thread_local Tape<T>* Tape<T>::active_ = nullptr;

}  // namespace gshdr
