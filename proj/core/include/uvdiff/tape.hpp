#pragma once

#include <functional>
#include <unordered_map>
#include <unordered_set>

#include "uvdiff/tensor.hpp"

namespace uvdiff {

// Reverse-mode tape. Ops executed while a TapeScope is active append a
// backward closure per node; backward() walks them in reverse, accumulating
// gradients into a uid-keyed map. Gradients exist for every tensor that
// received a contribution, including leaves (parameters, inputs).
template <class T>
class TapeT {
public:
    using Grads = std::unordered_map<std::uint64_t, TensorT<T>>;

    // A node's backward closure pulls its output gradient via grad_of() and
    // pushes input contributions via accumulate().
    void record(std::uint64_t output_uid, std::function<void(TapeT&)> backward) {
        nodes_.push_back(std::move(backward));
        known_.insert(output_uid);
    }

    bool knows(std::uint64_t uid) const { return known_.count(uid) != 0; }
    std::size_t num_nodes() const { return nodes_.size(); }

    const TensorT<T>* grad_of(std::uint64_t uid) const {
        auto it = grads_.find(uid);
        return it == grads_.end() ? nullptr : &it->second;
    }

    void accumulate(std::uint64_t uid, const TensorT<T>& contribution) {
        auto it = grads_.find(uid);
        if (it == grads_.end()) {
            grads_.emplace(uid, contribution);
            return;
        }
        TensorT<T>& g = it->second;
        require(g.same_shape(contribution), "tape: gradient shape mismatch");
        T* gp = g.mutable_data();
        const T* cp = contribution.data();
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += cp[i];
    }

    // Runs the backward pass from a scalar loss. Returns the gradient map;
    // the tape's nodes stay intact (clear() discards them).
    Grads backward(const TensorT<T>& loss) {
        require(loss.size() == 1, "backward: loss must be a scalar tensor");
        if (!knows(loss.uid()))
            fail_arg("backward: loss was not computed under this tape");
        grads_.clear();
        grads_.emplace(loss.uid(), TensorT<T>::full(loss.shape(), T(1)));
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)(*this);
        return std::move(grads_);
    }

    void clear() {
        nodes_.clear();
        grads_.clear();
        known_.clear();
    }

private:
    std::vector<std::function<void(TapeT&)>> nodes_;
    Grads grads_;
    std::unordered_set<std::uint64_t> known_;
};

namespace detail {
template <class T>
inline thread_local TapeT<T>* g_current_tape = nullptr;
}

template <class T>
TapeT<T>* current_tape() { return detail::g_current_tape<T>; }

// RAII activation of a tape on the current thread. Nesting replaces the
// active tape for the scope's lifetime.
template <class T>
class TapeScope {
public:
    explicit TapeScope(TapeT<T>& tape) : prev_(detail::g_current_tape<T>) {
        detail::g_current_tape<T> = &tape;
    }
    ~TapeScope() { detail::g_current_tape<T> = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    TapeT<T>* prev_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

} // namespace uvdiff
