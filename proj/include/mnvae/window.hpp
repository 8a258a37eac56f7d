#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mnvae/train.hpp"

namespace mnvae {

/// Dual loss thresholds delimiting the separation window. Defaults are the
/// reference values for the full-scale loss conventions; they are soft,
/// dataset-dependent settings, not constants.
struct WindowConfig {
  double mse_threshold = 250.0;
  double kl_threshold = 60.0;

  void validate() const {
    if (mse_threshold <= 0.0 || kl_threshold <= 0.0)
      throw std::invalid_argument("WindowConfig: thresholds must be positive");
  }
};

/// Epoch spans where both losses sit under their thresholds, plus the
/// checkpoint chosen for deployment.
struct SeparationWindow {
  struct Span {
    std::size_t start, end;  // inclusive epochs
  };
  std::vector<Span> spans;       // disjoint, sorted
  bool has_selection = false;
  std::size_t selected_epoch = 0;  // midpoint of the widest span
};

/// Epochs where mse <= mse_threshold and kl <= kl_threshold, grouped into
/// contiguous spans. The selected checkpoint is the midpoint of the widest
/// span (earliest span on ties), maximizing margin against the mixed-output
/// left edge and the noisy-output right edge.
inline SeparationWindow detect_window(const LossTrace& trace, const WindowConfig& cfg = {}) {
  cfg.validate();
  if (trace.records.empty()) throw std::invalid_argument("detect_window: empty trace");

  SeparationWindow win;
  bool open = false;
  for (const auto& r : trace.records) {
    const bool inside = r.mse <= cfg.mse_threshold && r.kl <= cfg.kl_threshold;
    if (inside && !open) {
      win.spans.push_back({r.epoch, r.epoch});
      open = true;
    } else if (inside) {
      win.spans.back().end = r.epoch;
    } else {
      open = false;
    }
  }

  if (!win.spans.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < win.spans.size(); ++i) {
      const auto width = [](const SeparationWindow::Span& s) { return s.end - s.start + 1; };
      if (width(win.spans[i]) > width(win.spans[best])) best = i;
    }
    win.has_selection = true;
    win.selected_epoch = (win.spans[best].start + win.spans[best].end) / 2;
  }
  return win;
}

/// Total epochs across all spans.
inline std::size_t window_width(const SeparationWindow& win) {
  std::size_t total = 0;
  for (const auto& s : win.spans) total += s.end - s.start + 1;
  return total;
}

/// CSV report: thresholds and selection repeated per span row; a single row
/// with empty span fields when no window was found (selected_epoch -1).
inline void write_window_csv(const SeparationWindow& win, const WindowConfig& cfg,
                             const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_window_csv: cannot open " + path);
  os << "mse_threshold,kl_threshold,selected_epoch,span_start,span_end,span_width\n";
  char buf[160];
  if (win.spans.empty()) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,-1,,,\n", cfg.mse_threshold, cfg.kl_threshold);
    os << buf;
    return;
  }
  for (const auto& s : win.spans) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu,%zu,%zu,%zu\n", cfg.mse_threshold,
                  cfg.kl_threshold, win.selected_epoch, s.start, s.end, s.end - s.start + 1);
    os << buf;
  }
}

}  // namespace mnvae
