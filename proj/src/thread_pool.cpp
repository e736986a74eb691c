#include "ctgv/thread_pool.hpp"

#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace ctgv {

namespace {

thread_local bool g_in_job = false;

// One persistent pool shared process-wide. Workers sleep on a condition
// variable between jobs; a job is a chunk counter the workers drain.
class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void set_threads(int n) {
    if (n < 1) n = 1;
    std::unique_lock<std::mutex> lk(mu_);
    if (n == threads_) return;
    stop_workers(lk);
    threads_ = n;
    start_workers(lk);
  }

  int threads() {
    std::unique_lock<std::mutex> lk(mu_);
    return threads_;
  }

  void run(int64_t begin, int64_t end, int64_t chunk,
           const std::function<void(int64_t, int64_t)>& fn) {
    {
      std::unique_lock<std::mutex> lk(mu_);
      job_fn_ = &fn;
      job_begin_ = begin;
      job_end_ = end;
      job_chunk_ = chunk;
      next_.store(begin, std::memory_order_relaxed);
      pending_ = static_cast<int>(workers_.size());
      ++job_id_;
    }
    cv_work_.notify_all();
    drain(begin, end, chunk, fn);  // main thread participates
    std::unique_lock<std::mutex> lk(mu_);
    cv_done_.wait(lk, [this] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

 private:
  Pool() : threads_(1) {}

  ~Pool() {
    std::unique_lock<std::mutex> lk(mu_);
    stop_workers(lk);
  }

  void start_workers(std::unique_lock<std::mutex>&) {
    for (int i = 0; i < threads_ - 1; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void stop_workers(std::unique_lock<std::mutex>& lk) {
    if (workers_.empty()) return;
    stopping_ = true;
    cv_work_.notify_all();
    lk.unlock();
    for (auto& w : workers_) w.join();
    lk.lock();
    workers_.clear();
    stopping_ = false;
  }

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int64_t, int64_t)>* fn = nullptr;
      int64_t begin = 0, end = 0, chunk = 0;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_work_.wait(lk, [&] { return stopping_ || job_id_ != seen; });
        if (stopping_) return;
        seen = job_id_;
        fn = job_fn_;
        begin = job_begin_;
        end = job_end_;
        chunk = job_chunk_;
      }
      if (fn) drain(begin, end, chunk, *fn);
      {
        std::unique_lock<std::mutex> lk(mu_);
        if (--pending_ == 0) cv_done_.notify_all();
      }
    }
  }

  void drain(int64_t, int64_t end, int64_t chunk,
             const std::function<void(int64_t, int64_t)>& fn) {
    g_in_job = true;
    for (;;) {
      int64_t b = next_.fetch_add(chunk, std::memory_order_relaxed);
      if (b >= end) break;
      fn(b, std::min(b + chunk, end));
    }
    g_in_job = false;
  }

  std::mutex mu_;
  std::condition_variable cv_work_;
  std::condition_variable cv_done_;
  std::vector<std::thread> workers_;
  int threads_;
  bool stopping_ = false;
  uint64_t job_id_ = 0;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_begin_ = 0, job_end_ = 0, job_chunk_ = 0;
  std::atomic<int64_t> next_{0};
  int pending_ = 0;
};

}  // namespace

void set_threads(int n) { Pool::instance().set_threads(n); }

int thread_count() { return Pool::instance().threads(); }

void parallel_for(int64_t begin, int64_t end, int64_t grain,
                  const std::function<void(int64_t, int64_t)>& fn) {
  if (begin >= end) return;
  int nthreads = Pool::instance().threads();
  if (g_in_job || nthreads <= 1 || end - begin <= grain) {
    fn(begin, end);
    return;
  }
  int64_t chunk = (end - begin + nthreads * 4 - 1) / (nthreads * 4);
  if (chunk < 1) chunk = 1;
  Pool::instance().run(begin, end, chunk, fn);
}

}  // namespace ctgv
