#pragma once

#include <atomic>
#include <cstddef>
#include <new>

// Live-byte accounting for matrix storage. Every RealMatrix / BandedMatrix
// buffer goes through CountingAllocator, so peak_bytes() reflects the peak
// working set of an attention call without instrumenting the whole heap.

namespace nearfar::memtrack {

namespace detail {
inline std::atomic<std::size_t> current_bytes_{0};
inline std::atomic<std::size_t> peak_bytes_{0};

inline void on_alloc(std::size_t n) noexcept {
    const std::size_t cur = current_bytes_.fetch_add(n, std::memory_order_relaxed) + n;
    std::size_t prev = peak_bytes_.load(std::memory_order_relaxed);
    while (prev < cur &&
           !peak_bytes_.compare_exchange_weak(prev, cur, std::memory_order_relaxed)) {
    }
}

inline void on_free(std::size_t n) noexcept {
    current_bytes_.fetch_sub(n, std::memory_order_relaxed);
}
}  // namespace detail

inline std::size_t current_bytes() noexcept {
    return detail::current_bytes_.load(std::memory_order_relaxed);
}

inline std::size_t peak_bytes() noexcept {
    return detail::peak_bytes_.load(std::memory_order_relaxed);
}

// Resets the peak to the current live size (not to zero: live buffers still count).
inline void reset_peak() noexcept {
    detail::peak_bytes_.store(current_bytes(), std::memory_order_relaxed);
}

template <class T>
struct CountingAllocator {
    using value_type = T;

    CountingAllocator() noexcept = default;
    template <class U>
    CountingAllocator(const CountingAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        detail::on_alloc(n * sizeof(T));
        return static_cast<T*>(::operator new(n * sizeof(T)));
    }
    void deallocate(T* p, std::size_t n) noexcept {
        detail::on_free(n * sizeof(T));
        ::operator delete(p);
    }

    template <class U>
    bool operator==(const CountingAllocator<U>&) const noexcept {
        return true;
    }
};

}  // namespace nearfar::memtrack
