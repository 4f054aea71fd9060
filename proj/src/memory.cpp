#include "fmtk/memory.hpp"

#include <fstream>
#include <unistd.h>

namespace fmtk {

AllocationTracker& AllocationTracker::instance() {
  static AllocationTracker tracker;
  return tracker;
}

void AllocationTracker::on_allocate(std::size_t bytes) noexcept {
  allocations_.fetch_add(1, std::memory_order_relaxed);
  const std::size_t now = live_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  std::size_t peak = peak_.load(std::memory_order_relaxed);
  while (now > peak && !peak_.compare_exchange_weak(peak, now, std::memory_order_relaxed)) {
  }
}

void AllocationTracker::on_deallocate(std::size_t bytes) noexcept {
  live_.fetch_sub(bytes, std::memory_order_relaxed);
}

std::size_t AllocationTracker::begin_window() noexcept {
  return peak_.exchange(live_.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

std::size_t AllocationTracker::end_window(std::size_t outer_peak) noexcept {
  const std::size_t window = peak_.load(std::memory_order_relaxed);
  std::size_t current = window;
  const std::size_t restored = outer_peak > window ? outer_peak : window;
  while (current < restored &&
         !peak_.compare_exchange_weak(current, restored, std::memory_order_relaxed)) {
  }
  return window;
}

std::size_t resident_set_bytes() {
  std::ifstream statm("/proc/self/statm");
  std::size_t pages_total = 0;
  std::size_t pages_resident = 0;
  if (!(statm >> pages_total >> pages_resident)) return 0;
  return pages_resident * static_cast<std::size_t>(::sysconf(_SC_PAGESIZE));
}

}  // namespace fmtk
