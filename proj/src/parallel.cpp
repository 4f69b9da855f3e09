#include "peft_forge/parallel.hpp"

#include <cstdlib>
#include <string>

#ifdef PEFT_FORGE_OPENMP
#include <omp.h>
#endif

namespace peft_forge {

namespace {

int initial_threads() {
    if (const char* env = std::getenv("PEFT_FORGE_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n >= 1) {
                return n;
            }
        } catch (...) {
        }
    }
#ifdef PEFT_FORGE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

int& threads_ref() {
    static int threads = initial_threads();
    return threads;
}

}  // namespace

int thread_count() { return threads_ref(); }

void set_thread_count(int threads) { threads_ref() = threads < 1 ? 1 : threads; }

bool parallel_worthwhile(std::size_t work) { return thread_count() > 1 && work >= (1u << 16); }

}  // namespace peft_forge
