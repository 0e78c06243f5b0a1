#include "slm/numcore/log.hpp"

#include <iostream>
#include <mutex>

namespace slm::log {

namespace {

struct State {
    std::mutex mu;
    Level level = Level::info;
    std::function<void(Level, const std::string&)> sink;
};

State& state() {
    static State s;
    return s;
}

const char* tag(Level l) {
    switch (l) {
        case Level::debug: return "debug";
        case Level::info: return "info";
        case Level::warn: return "warn";
        case Level::error: return "error";
    }
    return "?";
}

} // namespace

void set_level(Level level) {
    std::lock_guard lock(state().mu);
    state().level = level;
}

void set_sink(std::function<void(Level, const std::string&)> sink) {
    std::lock_guard lock(state().mu);
    state().sink = std::move(sink);
}

void write(Level level, const std::string& msg) {
    std::lock_guard lock(state().mu);
    if (level < state().level) return;
    if (state().sink) state().sink(level, msg);
    else std::clog << "[" << tag(level) << "] " << msg << '\n';
}

} // namespace slm::log
