#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <new>

namespace fmtk {

// Process-wide accounting of toolkit tensor buffers. Every Tensor allocates
// through TrackingAllocator, so live_bytes() is the exact number of bytes
// held by tensors at any instant.
class AllocationTracker {
 public:
  static AllocationTracker& instance();

  void on_allocate(std::size_t bytes) noexcept;
  void on_deallocate(std::size_t bytes) noexcept;

  std::size_t live_bytes() const noexcept { return live_.load(std::memory_order_relaxed); }
  std::size_t peak_bytes() const noexcept { return peak_.load(std::memory_order_relaxed); }
  std::uint64_t allocation_count() const noexcept {
    return allocations_.load(std::memory_order_relaxed);
  }

  // Restarts the high-water mark at the current live size and returns the
  // previous mark so an enclosing scope can restore it.
  std::size_t begin_window() noexcept;
  // Ends a window opened by begin_window; returns the window's peak and folds
  // it into the restored outer mark.
  std::size_t end_window(std::size_t outer_peak) noexcept;

 private:
  AllocationTracker() = default;

  std::atomic<std::size_t> live_{0};
  std::atomic<std::size_t> peak_{0};
  std::atomic<std::uint64_t> allocations_{0};
};

// RAII high-water window. Nested windows compose: the outer peak is always
// at least the inner one.
class PeakMemoryScope {
 public:
  PeakMemoryScope() noexcept
      : entry_live_(AllocationTracker::instance().live_bytes()),
        outer_(AllocationTracker::instance().begin_window()) {}
  PeakMemoryScope(const PeakMemoryScope&) = delete;
  PeakMemoryScope& operator=(const PeakMemoryScope&) = delete;
  ~PeakMemoryScope() { finish(); }

  // Closes the window early; later calls return the same value.
  std::size_t finish() noexcept {
    if (!done_) {
      peak_ = AllocationTracker::instance().end_window(outer_);
      done_ = true;
    }
    return peak_;
  }
  std::size_t entry_live_bytes() const noexcept { return entry_live_; }

 private:
  std::size_t entry_live_;
  std::size_t outer_;
  std::size_t peak_ = 0;
  bool done_ = false;
};

template <typename T>
struct TrackingAllocator {
  using value_type = T;

  TrackingAllocator() noexcept = default;
  template <typename U>
  TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    auto* p = static_cast<T*>(::operator new(n * sizeof(T)));
    AllocationTracker::instance().on_allocate(n * sizeof(T));
    return p;
  }
  void deallocate(T* p, std::size_t n) noexcept {
    AllocationTracker::instance().on_deallocate(n * sizeof(T));
    ::operator delete(p);
  }

  template <typename U>
  bool operator==(const TrackingAllocator<U>&) const noexcept {
    return true;
  }
};

// Resident set size of this process from /proc, when available.
std::size_t resident_set_bytes();

}  // namespace fmtk
