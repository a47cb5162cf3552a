#include "stpformer/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace stpformer {

namespace {

int read_env_cap() {
    const char* s = std::getenv("STPFORMER_THREADS");
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (s == nullptr || *s == '\0') return hw;
    int v = std::atoi(s);
    if (v < 1) return 1;
    return v < hw ? v : hw;
}

std::atomic<int> g_cap{0}; // 0 = uninitialized

// Persistent pool; workers sleep on a condition variable between jobs. One
// job at a time (parallel_for is not reentrant), which is all the tensor
// kernels need.
class Pool {
public:
    explicit Pool(int workers) {
        for (int i = 0; i < workers; ++i)
            threads_.emplace_back([this, i] { run(i + 1); });
    }

    ~Pool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    int width() const { return static_cast<int>(threads_.size()) + 1; }

    void dispatch(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
        int parts = width();
        std::size_t chunk = (n + parts - 1) / parts;
        {
            std::lock_guard<std::mutex> lk(mu_);
            body_ = &body;
            total_ = n;
            chunk_ = chunk;
            pending_ = parts - 1;
            ++epoch_;
        }
        cv_.notify_all();
        run_slice(0);
        std::unique_lock<std::mutex> lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        body_ = nullptr;
    }

private:
    void run(int slot) {
        std::uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lk(mu_);
            cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
            if (stop_) return;
            seen = epoch_;
            lk.unlock();
            run_slice(slot);
            lk.lock();
            if (--pending_ == 0) done_cv_.notify_one();
        }
    }

    void run_slice(int slot) {
        std::size_t begin = chunk_ * static_cast<std::size_t>(slot);
        if (begin >= total_) return;
        std::size_t end = begin + chunk_;
        if (end > total_) end = total_;
        (*body_)(begin, end);
    }

    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> threads_;
    const std::function<void(std::size_t, std::size_t)>* body_ = nullptr;
    std::size_t total_ = 0, chunk_ = 0;
    std::uint64_t epoch_ = 0;
    int pending_ = 0;
    bool stop_ = false;
};

Pool* pool_instance(int workers) {
    static Pool pool(workers);
    return &pool;
}

} // namespace

int max_threads() {
    int v = g_cap.load(std::memory_order_relaxed);
    if (v == 0) {
        v = read_env_cap();
        g_cap.store(v, std::memory_order_relaxed);
    }
    return v;
}

void set_max_threads(int n) {
    g_cap.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

void parallel_for(std::size_t n, std::size_t min_parallel,
                  const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    int cap = max_threads();
    if (cap <= 1 || n < min_parallel) {
        body(0, n);
        return;
    }
    // The pool is sized on first parallel use; later cap reductions simply
    // leave workers idle (partition still spans all of them, so keep using
    // the pool only when the cap allows it).
    Pool* pool = pool_instance(cap - 1);
    if (pool->width() <= 1) {
        body(0, n);
        return;
    }
    pool->dispatch(n, body);
}

} // namespace stpformer
