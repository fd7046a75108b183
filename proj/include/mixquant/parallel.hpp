#pragma once

#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace mixquant {

// Runs func(task_index) for every index in [0, num_tasks) on up to `workers`
// threads. Task-to-output mapping is the caller's business; tasks must write
// disjoint state. Results are identical for any worker count because the task
// decomposition is independent of it.
template <class Func>
void parallel_for(std::int64_t num_tasks, int workers, Func&& func) {
    if (num_tasks <= 0) return;
    if (workers <= 1 || num_tasks == 1) {
        for (std::int64_t i = 0; i < num_tasks; ++i) func(i);
        return;
    }
    const int n_threads = static_cast<int>(
        std::min<std::int64_t>(workers, num_tasks));
    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(n_threads) - 1);
    // Static interleaved schedule: thread t handles tasks t, t+n, t+2n, ...
    auto run_stride = [&](int first) {
        for (std::int64_t i = first; i < num_tasks; i += n_threads) func(i);
    };
    for (int t = 1; t < n_threads; ++t) threads.emplace_back(run_stride, t);
    run_stride(0);
    for (auto& th : threads) th.join();
}

} // namespace mixquant
