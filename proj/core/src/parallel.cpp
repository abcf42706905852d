#include "rifcn/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace rifcn {

namespace {

int read_budget() {
    if (const char* env = std::getenv("RIFCN_THREADS")) {
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end != env && v >= 0) {
            return v <= 1 ? 1 : static_cast<int>(v);
        }
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

} // namespace

int thread_budget() {
    static const int budget = read_budget();
    return budget;
}

void parallel_for(std::int64_t count,
                  const std::function<void(std::int64_t, std::int64_t)>& fn,
                  std::int64_t min_grain) {
    if (count <= 0) {
        return;
    }
    const std::int64_t budget = thread_budget();
    std::int64_t tasks = std::min<std::int64_t>(budget, (count + min_grain - 1) / std::max<std::int64_t>(1, min_grain));
    tasks = std::min(tasks, count);
    if (tasks <= 1) {
        fn(0, count);
        return;
    }
    const std::int64_t chunk = (count + tasks - 1) / tasks;
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(tasks - 1));
    for (std::int64_t t = 1; t < tasks; ++t) {
        const std::int64_t begin = t * chunk;
        const std::int64_t end = std::min(count, begin + chunk);
        if (begin >= end) {
            break;
        }
        workers.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    fn(0, std::min(count, chunk));
    for (auto& w : workers) {
        w.join();
    }
}

} // namespace rifcn
