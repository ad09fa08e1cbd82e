#ifndef UNICTRL_THREADING_HPP
#define UNICTRL_THREADING_HPP

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace unictrl {

// Work sharing over index ranges. Results are independent of the thread count
// because every index is processed by exactly one task and tasks must write
// disjoint outputs.
namespace detail {

class ThreadPool {
  public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void set_count(int n) {
        std::lock_guard<std::mutex> lk(config_mutex_);
        n = std::max(1, n);
        if (n == count_) return;
        stop_workers();
        count_ = n;
        start_workers();
    }

    int count() const { return count_; }

    void run(int64_t total, int64_t chunk, const std::function<void(int64_t, int64_t)>& fn) {
        if (total <= 0) return;
        if (count_ == 1 || nesting_depth() > 0 || total <= chunk) {
            nesting_depth()++;
            fn(0, total);
            nesting_depth()--;
            return;
        }
        std::lock_guard<std::mutex> run_lk(run_mutex_);
        {
            std::lock_guard<std::mutex> lk(job_mutex_);
            job_fn_.store(&fn, std::memory_order_relaxed);
            job_total_.store(total, std::memory_order_relaxed);
            job_chunk_.store(chunk, std::memory_order_relaxed);
            job_completed_ = 0;
            job_next_.store(0, std::memory_order_release);
            ++generation_;
            job_cv_.notify_all();
        }
        nesting_depth()++;
        process_chunks();
        nesting_depth()--;
        {
            std::unique_lock<std::mutex> lk(job_mutex_);
            done_cv_.wait(lk, [&] { return job_completed_ == total; });
            job_fn_.store(nullptr, std::memory_order_relaxed);
        }
    }

  private:
    ThreadPool() = default;
    ~ThreadPool() { stop_workers(); }

    static int& nesting_depth() {
        thread_local int depth = 0;
        return depth;
    }

    void start_workers() {
        shutdown_ = false;
        for (int i = 0; i < count_ - 1; ++i) {
            workers_.emplace_back([this] {
                nesting_depth() = 1;  // nested parallel_for inside a worker runs inline
                worker_loop();
            });
        }
    }

    void stop_workers() {
        {
            std::lock_guard<std::mutex> lk(job_mutex_);
            shutdown_ = true;
            job_cv_.notify_all();
        }
        for (auto& w : workers_) w.join();
        workers_.clear();
        shutdown_ = false;
    }

    void worker_loop() {
        uint64_t seen = 0;
        for (;;) {
            {
                std::unique_lock<std::mutex> lk(job_mutex_);
                job_cv_.wait(lk, [&] { return shutdown_ || generation_ != seen; });
                if (shutdown_) return;
                seen = generation_;
            }
            process_chunks();
        }
    }

    // Completion is tracked in indices, not chunks, so a worker that raced in
    // with a stale chunk size still accounts correctly.
    void process_chunks() {
        for (;;) {
            int64_t chunk = job_chunk_.load(std::memory_order_relaxed);
            int64_t begin = job_next_.fetch_add(chunk, std::memory_order_acq_rel);
            int64_t total = job_total_.load(std::memory_order_relaxed);
            if (begin >= total) break;
            const auto* fn = job_fn_.load(std::memory_order_relaxed);
            if (!fn) break;
            int64_t end = std::min(begin + chunk, total);
            (*fn)(begin, end);
            std::lock_guard<std::mutex> lk(job_mutex_);
            job_completed_ += end - begin;
            if (job_completed_ == job_total_.load(std::memory_order_relaxed)) {
                done_cv_.notify_all();
            }
        }
    }

    std::mutex config_mutex_;
    std::mutex run_mutex_;
    std::mutex job_mutex_;
    std::condition_variable job_cv_;
    std::condition_variable done_cv_;
    std::vector<std::thread> workers_;
    int count_ = 1;
    bool shutdown_ = false;

    uint64_t generation_ = 0;
    std::atomic<const std::function<void(int64_t, int64_t)>*> job_fn_{nullptr};
    std::atomic<int64_t> job_total_{0};
    std::atomic<int64_t> job_chunk_{1};
    int64_t job_completed_ = 0;
    std::atomic<int64_t> job_next_{0};
};

}  // namespace detail

inline void set_thread_count(int n) { detail::ThreadPool::instance().set_count(n); }

inline int thread_count() { return detail::ThreadPool::instance().count(); }

// Runs fn(begin, end) over [0, total) in chunks; fn must write disjoint
// outputs per index.
inline void parallel_for(int64_t total, const std::function<void(int64_t, int64_t)>& fn,
                         int64_t chunk = 0) {
    if (chunk <= 0) {
        chunk = std::max<int64_t>(1, total / (int64_t(thread_count()) * 4));
    }
    detail::ThreadPool::instance().run(total, chunk, fn);
}

}  // namespace unictrl

#endif
