#include "flowcoh/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace flowcoh {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

WarningSink& current_sink() {
  static WarningSink sink;
  return sink;
}

}  // namespace

void warn(std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (auto& sink = current_sink()) {
    sink(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(sink_mutex());
  return std::exchange(current_sink(), std::move(sink));
}

struct WarningCapture::State {
  mutable std::mutex mutex;
  std::vector<std::string> messages;
};

WarningCapture::WarningCapture() : state_(new State) {
  previous_ = set_warning_sink([state = state_](std::string_view msg) {
    std::lock_guard lock(state->mutex);
    state->messages.emplace_back(msg);
  });
}

WarningCapture::~WarningCapture() {
  set_warning_sink(std::move(previous_));
  delete state_;
}

std::vector<std::string> WarningCapture::messages() const {
  std::lock_guard lock(state_->mutex);
  return state_->messages;
}

bool WarningCapture::contains(std::string_view needle) const {
  std::lock_guard lock(state_->mutex);
  for (const auto& m : state_->messages) {
    if (m.find(needle) != std::string::npos) return true;
  }
  return false;
}

}  // namespace flowcoh
