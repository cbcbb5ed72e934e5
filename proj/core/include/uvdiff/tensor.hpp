#pragma once

#include <atomic>
#include <cmath>
#include <cstring>
#include <memory>
#include <utility>
#include <vector>

#include "uvdiff/common.hpp"
#include "uvdiff/rng.hpp"

namespace uvdiff {

namespace detail {
inline std::uint64_t next_uid() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}
}

// Dense row-major n-d tensor with value semantics and copy-on-write storage.
// Copies are O(1); writing through mutable_data() clones shared storage and
// stamps a fresh uid. The uid identifies a *value* for gradient bookkeeping:
// copies of the same computed value share it, mutation invalidates it.
template <class T>
class TensorT {
public:
    using value_type = T;

    TensorT() : shape_{}, storage_(nullptr), uid_(0) {}

    explicit TensorT(Shape shape)
        : shape_(std::move(shape)),
          storage_(std::make_shared<std::vector<T>>(numel(shape_), T(0))),
          uid_(detail::next_uid()) {}

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }

    static TensorT full(Shape shape, T value) {
        TensorT t(std::move(shape));
        std::fill(t.storage_->begin(), t.storage_->end(), value);
        return t;
    }

    static TensorT ones(Shape shape) { return full(std::move(shape), T(1)); }

    static TensorT from_data(Shape shape, std::vector<T> data) {
        require(numel(shape) == data.size(),
                "from_data: " + shape_str(shape) + " needs " +
                    std::to_string(numel(shape)) + " values, got " +
                    std::to_string(data.size()));
        TensorT t;
        t.shape_ = std::move(shape);
        t.storage_ = std::make_shared<std::vector<T>>(std::move(data));
        t.uid_ = detail::next_uid();
        return t;
    }

    static TensorT scalar(T value) { return full(Shape{}, value); }

    static TensorT randn(Shape shape, Rng& rng) {
        TensorT t(std::move(shape));
        rng.fill_normal(t.storage_->data(), t.storage_->size());
        return t;
    }

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t extent(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return storage_ ? storage_->size() : 0; }
    std::uint64_t uid() const { return uid_; }

    const T* data() const { return storage_->data(); }

    // Clones shared storage before returning a writable pointer and stamps a
    // new uid (the tensor now holds a different value than any prior copy).
    T* mutable_data() {
        if (storage_.use_count() > 1)
            storage_ = std::make_shared<std::vector<T>>(*storage_);
        uid_ = detail::next_uid();
        return storage_->data();
    }

    T operator[](std::size_t i) const { return (*storage_)[i]; }

    template <class... Is>
    T at(Is... idx) const {
        return (*storage_)[offset(idx...)];
    }

    template <class... Is>
    std::size_t offset(Is... idx) const {
        static_assert(sizeof...(Is) > 0);
        require(sizeof...(Is) == shape_.size(), "offset: rank mismatch");
        std::size_t is[] = {static_cast<std::size_t>(idx)...};
        std::size_t off = 0;
        for (std::size_t d = 0; d < shape_.size(); ++d) {
            require(is[d] < shape_[d], "offset: index out of range");
            off = off * shape_[d] + is[d];
        }
        return off;
    }

    // Gradient-tracking flag. Ops propagate it; toggling does not change the
    // value, so the uid is left alone.
    bool tracked() const { return tracked_; }
    void set_tracked(bool on) { tracked_ = on; }

    // Same value, not tracked: safe to use outside the tape without
    // recording. Shares storage and uid.
    TensorT detached() const {
        TensorT t = *this;
        t.tracked_ = false;
        return t;
    }

    // Deep copy with a fresh uid (distinct value identity, equal contents).
    TensorT clone() const {
        TensorT t;
        t.shape_ = shape_;
        t.storage_ = std::make_shared<std::vector<T>>(*storage_);
        t.uid_ = detail::next_uid();
        t.tracked_ = tracked_;
        return t;
    }

    // View with a different shape, same element count. Shares storage but is
    // a *new value node* (fresh uid); the autodiff reshape op handles
    // gradient routing itself.
    TensorT reshaped(Shape shape) const {
        require(numel(shape) == size(),
                "reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
        TensorT t = *this;
        t.shape_ = std::move(shape);
        t.uid_ = detail::next_uid();
        return t;
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (const T& v : *storage_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class U>
    TensorT<U> cast() const {
        std::vector<U> d(size());
        const T* src = data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<U>(src[i]);
        return TensorT<U>::from_data(shape_, std::move(d));
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> storage_;
    std::uint64_t uid_ = 0;
    bool tracked_ = false;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <class T>
double l2_norm(const TensorT<T>& t) {
    double s = 0;
    const T* p = t.data();
    for (std::size_t i = 0; i < t.size(); ++i) s += double(p[i]) * double(p[i]);
    return std::sqrt(s);
}

template <class T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
    require(a.same_shape(b), "max_abs_diff: shape mismatch");
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(double(a[i]) - double(b[i])));
    return m;
}

template <class T>
bool bit_equal(const TensorT<T>& a, const TensorT<T>& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

} // namespace uvdiff
