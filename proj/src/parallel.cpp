#include "arfc/parallel.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>
#include <string>

namespace arfc {

namespace {

int threads_from_env()
{
    if (const char* env = std::getenv("ARFC_THREADS")) {
        try {
            int value = std::stoi(env);
            if (value >= 1)
                return value;
        } catch (const std::exception&) {
        }
    }
    return omp_get_max_threads();
}

std::atomic<int> g_threads{0};

}  // namespace

int kernel_threads()
{
    int t = g_threads.load(std::memory_order_relaxed);
    if (t == 0) {
        t = threads_from_env();
        g_threads.store(t, std::memory_order_relaxed);
    }
    return t;
}

void set_kernel_threads(int threads) { g_threads.store(threads < 1 ? 1 : threads, std::memory_order_relaxed); }

}  // namespace arfc
