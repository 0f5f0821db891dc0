#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace setreg {

// Resolves a requested worker count: 0 means "use SETREG_THREADS, else 1".
inline std::size_t resolve_threads(std::size_t requested) {
    if(requested > 0) return requested;
    if(const char *env = std::getenv("SETREG_THREADS")){
        try {
            const long v = std::stol(env);
            if(v > 0) return static_cast<std::size_t>(v);
        } catch(const std::exception &) {
        }
    }
    return 1;
}

// Runs fn(i) for i in [0, n). Work is split in contiguous blocks; callers write
// to disjoint slots and reduce afterwards in index order, so results do not
// depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn &&fn) {
    threads = std::min(std::max<std::size_t>(threads, 1), n);
    if(threads <= 1){
        for(std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr first_error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(threads);
    const std::size_t block = (n + threads - 1) / threads;
    for(std::size_t t = 0; t < threads; ++t){
        const std::size_t begin = t * block;
        const std::size_t end = std::min(n, begin + block);
        if(begin >= end) break;
        pool.emplace_back([&, begin, end]{
            try {
                for(std::size_t i = begin; i < end; ++i) fn(i);
            } catch(...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if(!first_error) first_error = std::current_exception();
            }
        });
    }
    for(auto &th : pool) th.join();
    if(first_error) std::rethrow_exception(first_error);
}

} // namespace setreg
