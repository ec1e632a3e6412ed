#include "threads.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <iostream>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "error.hpp"

namespace despeckler {

namespace {

std::atomic<std::size_t> g_override{0};

std::size_t env_limit() {
  const char* env = std::getenv("DESPECKLER_THREADS");
  if (env == nullptr) return 0;
  try {
    long v = std::stol(env);
    return v > 0 ? static_cast<std::size_t>(v) : 0;
  } catch (...) {
    return 0;
  }
}

}  // namespace

void warn(const std::string& message) {
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "despeckler: warning: " << message << '\n';
}

std::size_t thread_limit() {
  if (std::size_t o = g_override.load(); o > 0) return o;
  if (std::size_t e = env_limit(); e > 0) return e;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void set_thread_limit(std::size_t n) { g_override.store(n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(thread_limit(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace despeckler
