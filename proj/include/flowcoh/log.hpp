#pragma once

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace flowcoh {

using WarningSink = std::function<void(std::string_view)>;

/// Emit a non-fatal warning. Goes to stderr as "warning: <msg>" unless a
/// sink has been installed.
void warn(std::string_view message);

/// Install a process-wide sink; an empty function restores the default.
/// Returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);

/// Collects warnings for the lifetime of the object (tests, CLI summaries).
class WarningCapture {
 public:
  WarningCapture();
  ~WarningCapture();
  WarningCapture(const WarningCapture&) = delete;
  WarningCapture& operator=(const WarningCapture&) = delete;

  std::vector<std::string> messages() const;
  bool contains(std::string_view needle) const;

 private:
  struct State;
  State* state_;
  WarningSink previous_;
};

}  // namespace flowcoh
