#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

#include "tagsync/time.hpp"

namespace tagsync::engine {

// Discriminates what a scheduled callback stands for; useful for tracing and
// for tests that inspect processing order.
enum class EventKind : std::uint8_t {
    pair_emission,
    arrival,
    detector_fire,
    epoch_tick,
    generic,
};

struct Event {
    SimInstant due;
    std::uint64_t seq = 0;  // insertion order, breaks due-time ties
    EventKind kind = EventKind::generic;
    std::function<void()> action;
};

// Deterministic single-threaded event queue. Total order is (due, seq) with
// seq strictly increasing per insertion, so identical schedules replay
// identically; there is no other source of ordering.
class EventQueue {
  public:
    SimInstant now() const { return now_; }
    std::size_t pending() const { return heap_.size(); }

    // Throws PastEventError if due < now().
    void schedule(SimInstant due, EventKind kind, std::function<void()> action);

    // Executes every event with due <= t in (due, seq) order, including
    // events scheduled while running. now() never decreases and ends at t.
    // Returns the number of events executed.
    std::uint64_t run_until(SimInstant t);

  private:
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            if (a.due != b.due) return a.due > b.due;
            return a.seq > b.seq;
        }
    };

    std::priority_queue<Event, std::vector<Event>, Later> heap_;
    SimInstant now_{};
    std::uint64_t next_seq_ = 0;
};

}  // namespace tagsync::engine
