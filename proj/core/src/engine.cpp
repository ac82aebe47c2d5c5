#include "tagsync/engine.hpp"

#include "tagsync/errors.hpp"

namespace tagsync::engine {

void EventQueue::schedule(SimInstant due, EventKind kind, std::function<void()> action) {
    if (due < now_) {
        throw PastEventError("event scheduled in the past");
    }
    heap_.push(Event{due, next_seq_++, kind, std::move(action)});
}

std::uint64_t EventQueue::run_until(SimInstant t) {
    if (t < now_) {
        throw PastEventError("run_until target precedes current time");
    }
    std::uint64_t processed = 0;
    while (!heap_.empty() && heap_.top().due <= t) {
        // Copy out before pop: the action may schedule new events.
        Event ev = heap_.top();
        heap_.pop();
        now_ = ev.due;
        if (ev.action) ev.action();
        ++processed;
    }
    now_ = t;
    return processed;
}

}  // namespace tagsync::engine
