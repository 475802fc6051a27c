#pragma once

// Task-parallel execution on a single machine, two layers:
//   coarse - component functions of one expansion order, grouped by
//            load_balance and run one group per thread;
//   fine   - independent grid-point evaluations within a refinement level,
//            strided across a small per-group worker budget.
//
// Submitted callables must be pure over shared immutable inputs.  Results are
// always gathered in task order, so every numerical output is independent of
// the worker count.  Shared accumulators are mutated only by the coordinator
// between level / order barriers.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ddsg {

inline unsigned default_worker_count() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

struct TaskPlan {
    unsigned worker_count = 1;
    // groups[g] lists task ids owned by worker group g, in execution order.
    std::vector<std::vector<std::size_t>> groups;
    // Fine-layer worker budget available inside each coarse group.
    unsigned fine_workers_per_group = 1;
};

// Static balanced partition of tasks onto at most worker_count groups.
// Longest-processing-time greedy: tasks sorted by descending cost (ties by
// ascending id) land on the least-loaded group (ties by lowest group id).
inline TaskPlan load_balance(const std::vector<double>& component_costs, unsigned worker_count) {
    if (worker_count < 1) throw std::invalid_argument("load_balance: worker_count must be >= 1");
    TaskPlan plan;
    plan.worker_count = worker_count;
    const std::size_t n = component_costs.size();
    const std::size_t n_groups = std::min<std::size_t>(worker_count, std::max<std::size_t>(n, 1));
    plan.groups.resize(n_groups);
    plan.fine_workers_per_group =
        std::max(1u, static_cast<unsigned>(worker_count / std::max<std::size_t>(n_groups, 1)));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return component_costs[a] > component_costs[b];
    });
    std::vector<double> load(n_groups, 0.0);
    for (std::size_t id : order) {
        std::size_t g = 0;
        for (std::size_t k = 1; k < n_groups; ++k)
            if (load[k] < load[g]) g = k;
        plan.groups[g].push_back(id);
        load[g] += component_costs[id];
    }
    for (auto& grp : plan.groups) std::sort(grp.begin(), grp.end());
    return plan;
}

// Failure of one task inside parallel_map; `cause` holds the original
// exception thrown by the callable.
class task_error : public std::runtime_error {
  public:
    task_error(std::size_t task_id, std::exception_ptr cause)
        : std::runtime_error("task " + std::to_string(task_id) + " failed: " + describe(cause)),
          task_id_(task_id), cause_(std::move(cause)) {}

    std::size_t task_id() const { return task_id_; }
    [[noreturn]] void rethrow_cause() const { std::rethrow_exception(cause_); }

  private:
    static std::string describe(const std::exception_ptr& e) {
        try {
            std::rethrow_exception(e);
        } catch (const std::exception& ex) {
            return ex.what();
        } catch (...) {
            return "unknown exception";
        }
    }
    std::size_t task_id_;
    std::exception_ptr cause_;
};

namespace detail {

struct TaskFailure {
    std::size_t task_id = 0;
    std::exception_ptr error;
};

// Runs fn(i) for i in [0, n) on up to `workers` threads, stride-partitioned.
// The first failing task (lowest id) is rethrown with its id attached.
template <typename Fn>
void for_each_index(std::size_t n, unsigned workers, Fn&& fn) {
    if (n == 0) return;
    const unsigned w = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
    if (w == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                throw task_error(i, std::current_exception());
            }
        }
        return;
    }
    std::vector<TaskFailure> failures(w);
    std::vector<std::thread> threads;
    threads.reserve(w);
    for (unsigned t = 0; t < w; ++t) {
        threads.emplace_back([&, t]() {
            for (std::size_t i = t; i < n; i += w) {
                try {
                    fn(i);
                } catch (...) {
                    failures[t] = {i, std::current_exception()};
                    return;
                }
            }
        });
    }
    for (auto& th : threads) th.join();
    const TaskFailure* first = nullptr;
    for (const auto& f : failures)
        if (f.error && (!first || f.task_id < first->task_id)) first = &f;
    if (first) throw task_error(first->task_id, first->error);
}

} // namespace detail

// Applies f to every task and returns the results in task order regardless of
// the worker count.  Task failures are aggregated; the failure with the lowest
// task id is reported.
template <typename Task, typename Fn>
auto parallel_map(const std::vector<Task>& tasks, unsigned worker_count, Fn&& f)
    -> std::vector<decltype(f(tasks.front()))> {
    using R = decltype(f(tasks.front()));
    std::vector<R> results(tasks.size());
    detail::for_each_index(tasks.size(), worker_count,
                           [&](std::size_t i) { results[i] = f(tasks[i]); });
    return results;
}

} // namespace ddsg
