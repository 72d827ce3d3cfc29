#include "pointlang/threadpool.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace pointlang {
namespace {

// Persistent pool; workers sleep between jobs. One job at a time (dense
// kernels are only ever dispatched from the single graph-execution thread).
class Pool {
 public:
  explicit Pool(int workers) : stop_(false), job_id_(0), pending_(0) {
    for (int i = 1; i < workers; ++i) {
      threads_.emplace_back([this, i] { worker_loop(i); });
    }
    width_ = workers;
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int width() const { return width_; }

  void run(std::size_t n, std::size_t grain,
           const std::function<void(std::size_t, std::size_t)>& fn) {
    int parts = width_;
    std::size_t chunk = (n + parts - 1) / parts;
    chunk = std::max(chunk, grain);
    parts = int((n + chunk - 1) / chunk);
    if (parts <= 1) {
      fn(0, n);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(mu_);
      fn_ = &fn;
      n_ = n;
      chunk_ = chunk;
      parts_ = parts;
      pending_ = parts - 1;  // chunk 0 runs on the caller
      ++job_id_;
    }
    cv_.notify_all();
    fn(0, std::min(chunk, n));
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    fn_ = nullptr;
  }

 private:
  void worker_loop(int index) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t, std::size_t)>* fn = nullptr;
      std::size_t begin = 0, end = 0;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || job_id_ != seen; });
        if (stop_) return;
        seen = job_id_;
        if (index >= parts_) continue;  // no chunk for this worker
        fn = fn_;
        begin = std::min(n_, std::size_t(index) * chunk_);
        end = std::min(n_, begin + chunk_);
      }
      (*fn)(begin, end);
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (--pending_ == 0) done_cv_.notify_one();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  bool stop_;
  std::uint64_t job_id_;
  const std::function<void(std::size_t, std::size_t)>* fn_ = nullptr;
  std::size_t n_ = 0, chunk_ = 0;
  int parts_ = 0, width_ = 1;
  int pending_;
};

Pool& pool() {
  static Pool p(thread_count());
  return p;
}

}  // namespace

int thread_count() {
  static int n = [] {
    if (const char* env = std::getenv("POINTLANG_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) return std::min(v, 64);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return int(std::clamp<unsigned>(hw == 0 ? 1 : hw, 1, 16));
  }();
  return n;
}

void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  if (thread_count() == 1 || n <= grain) {
    fn(0, n);
    return;
  }
  pool().run(n, grain, fn);
}

}  // namespace pointlang
