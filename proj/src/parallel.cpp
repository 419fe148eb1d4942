#include "srkit/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace srkit {
namespace {

int env_thread_count() {
  if (const char* env = std::getenv("SRKIT_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

// Long-lived worker pool. A job is a half-open index range plus a function;
// workers and the calling thread pull indices from a shared atomic cursor.
class Pool {
 public:
  explicit Pool(int threads) : size_(threads) {
    for (int i = 0; i + 1 < threads; ++i)
      workers_.emplace_back([this] { worker_loop(); });
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
  }

  int size() const { return size_; }

  void run(Index begin, Index end, const std::function<void(Index)>& fn) {
    if (end - begin == 1 || workers_.empty()) {
      for (Index i = begin; i < end; ++i) fn(i);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(mu_);
      fn_ = &fn;
      cursor_.store(begin, std::memory_order_relaxed);
      end_ = end;
      pending_ = static_cast<int>(workers_.size());
      ++generation_;
    }
    cv_.notify_all();
    drain();
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    fn_ = nullptr;
  }

 private:
  void drain() {
    const std::function<void(Index)>& fn = *fn_;
    for (;;) {
      const Index i = cursor_.fetch_add(1, std::memory_order_relaxed);
      if (i >= end_) break;
      fn(i);
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      drain();
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  const int size_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(Index)>* fn_ = nullptr;
  std::atomic<Index> cursor_{0};
  Index end_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

std::unique_ptr<Pool> g_pool;
std::mutex g_pool_mu;

Pool& pool() {
  std::lock_guard<std::mutex> lk(g_pool_mu);
  if (!g_pool) g_pool = std::make_unique<Pool>(env_thread_count());
  return *g_pool;
}

}  // namespace

void parallel_for(Index begin, Index end, const std::function<void(Index)>& fn) {
  if (end <= begin) return;
  pool().run(begin, end, fn);
}

void set_thread_count(int n) {
  std::lock_guard<std::mutex> lk(g_pool_mu);
  g_pool = std::make_unique<Pool>(n > 0 ? n : 1);
}

int thread_count() { return pool().size(); }

}  // namespace srkit
