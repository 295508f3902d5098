#include "compmark/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace compmark {

namespace {
thread_local bool inside_worker = false;
}

std::size_t worker_count() {
  if (const char* env = std::getenv("COMPMARK_THREADS")) {
    try {
      const long v = std::stol(env);
      if (v > 0) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t tasks, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(worker_count(), tasks);
  if (inside_worker || workers <= 1) {
    for (std::size_t t = 0; t < tasks; ++t) fn(t);
    return;
  }
  std::vector<std::exception_ptr> errors(tasks);
  std::atomic<std::size_t> next{0};
  auto body = [&] {
    inside_worker = true;
    for (std::size_t t = next++; t < tasks; t = next++) {
      try {
        fn(t);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
    inside_worker = false;
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace compmark
