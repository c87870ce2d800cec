#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace sbicm {

// Worker count resolution: SBICM_WORKERS env var, else hardware concurrency.
inline unsigned worker_count() {
    static const unsigned cached = [] {
        if (const char* env = std::getenv("SBICM_WORKERS")) {
            const long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return static_cast<unsigned>(v);
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw == 0 ? 1u : hw;
    }();
    return cached;
}

namespace detail {

// Set while a pool worker executes a task; nested parallel_for calls from
// inside the pool degrade to serial execution instead of deadlocking.
inline bool& in_pool_worker() {
    static thread_local bool flag = false;
    return flag;
}

// Minimal persistent pool. Work items write to disjoint memory, so results
// never depend on scheduling; reductions must order their own sums.
class ThreadPool {
public:
    explicit ThreadPool(unsigned n_threads) {
        for (unsigned i = 0; i < n_threads; ++i) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& w : workers_) w.join();
    }

    void run(const std::function<void(std::size_t)>& task, std::size_t n_tasks) {
        std::lock_guard<std::mutex> run_guard(run_mutex_);  // one parallel region at a time
        std::unique_lock<std::mutex> lock(mutex_);
        task_ = &task;
        next_task_ = 0;
        n_tasks_ = n_tasks;
        pending_ = n_tasks;
        cv_.notify_all();
        done_cv_.wait(lock, [this] { return pending_ == 0; });
        task_ = nullptr;
    }

private:
    void worker_loop() {
        in_pool_worker() = true;
        std::unique_lock<std::mutex> lock(mutex_);
        for (;;) {
            cv_.wait(lock, [this] { return stopping_ || (task_ && next_task_ < n_tasks_); });
            if (stopping_) return;
            while (task_ && next_task_ < n_tasks_) {
                const std::size_t idx = next_task_++;
                const auto* task = task_;
                lock.unlock();
                (*task)(idx);
                lock.lock();
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::mutex run_mutex_;
    std::mutex mutex_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(std::size_t)>* task_ = nullptr;
    std::size_t next_task_ = 0, n_tasks_ = 0, pending_ = 0;
    bool stopping_ = false;
};

inline ThreadPool& pool() {
    static ThreadPool instance(worker_count());
    return instance;
}

}  // namespace detail

// Runs fn(begin, end) over a partition of [0, n). Partitioning is fixed by
// grain, not by worker count, so any per-chunk state is reproducible.
inline void parallel_for(std::size_t n, std::size_t grain, const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const unsigned workers = worker_count();
    if (workers <= 1 || n <= grain || detail::in_pool_worker()) {
        fn(0, n);
        return;
    }
    const std::size_t n_chunks = (n + grain - 1) / grain;
    std::function<void(std::size_t)> task = [&](std::size_t chunk) {
        const std::size_t begin = chunk * grain;
        fn(begin, std::min(begin + grain, n));
    };
    detail::pool().run(task, n_chunks);
}

}  // namespace sbicm
