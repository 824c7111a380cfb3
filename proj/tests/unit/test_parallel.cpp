#include "kmeflow/parallel.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <stdexcept>
#include <vector>

using namespace kmeflow;

TEST(Parallel, EveryIndexOnce) {
    for (unsigned threads : {0u, 1u, 2u, 7u}) {
        std::vector<std::atomic<int>> hits(1000);
        parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i].fetch_add(1); });
        for (const auto& h : hits) ASSERT_EQ(h.load(), 1) << threads << " threads";
    }
}

TEST(Parallel, EmptyRange) {
    bool called = false;
    parallel_for(0, 4, [&](std::size_t) { called = true; });
    EXPECT_FALSE(called);
}

TEST(Parallel, ExceptionReachesCaller) {
    for (unsigned threads : {1u, 4u}) {
        EXPECT_THROW(parallel_for(100, threads,
                                  [](std::size_t i) {
                                      if (i == 37) throw std::runtime_error("boom");
                                  }),
                     std::runtime_error);
    }
}

TEST(Parallel, DefaultThreadCountPositive) { EXPECT_GE(default_thread_count(), 1u); }
