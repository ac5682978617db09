#include "geogan/core.hpp"

#include <cstdlib>

namespace geogan {

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool([] {
    if (const char* env = std::getenv("GEOGAN_THREADS")) {
      const int n = std::atoi(env);
      if (n >= 1) return n - 1;  // n total execution lanes incl. caller
    }
    const unsigned hc = std::thread::hardware_concurrency();
    const int extra = static_cast<int>(hc == 0 ? 0 : std::min(hc - 1, 7u));
    return extra;
  }());
  return pool;
}

ThreadPool::ThreadPool(int nworkers) {
  for (int i = 0; i < nworkers; ++i)
    threads_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stop_ = true;
  }
  cv_work_.notify_all();
  for (auto& t : threads_) t.join();
}

void ThreadPool::worker_loop() {
  for (;;) {
    int block = -1;
    const std::function<void(int)>* job = nullptr;
    {
      std::unique_lock<std::mutex> lk(mu_);
      cv_work_.wait(lk, [this] { return stop_ || next_block_ < total_blocks_; });
      if (stop_) return;
      block = next_block_++;
      job = job_;
      ++in_flight_;
    }
    (*job)(block);
    {
      std::lock_guard<std::mutex> lk(mu_);
      --in_flight_;
      if (next_block_ >= total_blocks_ && in_flight_ == 0) cv_done_.notify_all();
    }
  }
}

void ThreadPool::run_blocks(int nblocks, const std::function<void(int)>& fn) {
  if (threads_.empty() || nblocks <= 1) {
    for (int b = 0; b < nblocks; ++b) fn(b);
    return;
  }
  {
    std::lock_guard<std::mutex> lk(mu_);
    job_ = &fn;
    next_block_ = 0;
    total_blocks_ = nblocks;
  }
  cv_work_.notify_all();
  // The caller participates too.
  for (;;) {
    int block = -1;
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (next_block_ >= total_blocks_) break;
      block = next_block_++;
      ++in_flight_;
    }
    fn(block);
    {
      std::lock_guard<std::mutex> lk(mu_);
      --in_flight_;
    }
  }
  std::unique_lock<std::mutex> lk(mu_);
  cv_done_.wait(lk, [this] { return next_block_ >= total_blocks_ && in_flight_ == 0; });
  total_blocks_ = 0;
  job_ = nullptr;
}

void parallel_blocks(int nblocks, const std::function<void(int)>& fn) {
  ThreadPool::instance().run_blocks(nblocks, fn);
}

}  // namespace geogan
