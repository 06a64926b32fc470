#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "ento/detect.hpp"
#include "ento/frame.hpp"
#include "ento/rng.hpp"

namespace ento::imaging {

// Rolling pre-trigger buffer. Oldest frames fall out when full.
class FrameRing {
 public:
  explicit FrameRing(std::size_t capacity);

  void push(Frame frame);
  std::size_t size() const { return count_; }
  std::size_t capacity() const { return cap_; }
  std::uint64_t dropped() const { return dropped_; }
  // i = 0 addresses the oldest buffered frame.
  const Frame& at(std::size_t i) const;

 private:
  std::vector<Frame> slots_;
  std::size_t cap_;
  std::size_t head_ = 0;   // next write position
  std::size_t count_ = 0;
  std::uint64_t dropped_ = 0;
};

// Smallest whole number of frames covering the requested span.
int ring_capacity(double fps, double seconds);

double mean_luminance(const Frame& frame);

struct TriggerConfig {
  int window = 8;          // frames averaged for the baseline
  double ratio = 1.5;      // fire when luma >= ratio * baseline
  int cooldown = 38;       // indices skipped after a trigger
  int followup_count = 2;  // extra frames extracted after the trigger frame
  int followup_stride = 1; // index step between extracted frames
};

void validate(const TriggerConfig& cfg);

struct CaptureEvent {
  std::size_t trigger_index = 0;
  // Trigger frame first, then followups; indices past the end of the series
  // are dropped.
  std::vector<std::size_t> frame_indices;

  bool operator==(const CaptureEvent&) const = default;
};

// Scans a brightness series. Index i (i >= window) fires when lumas[i] is at
// least ratio times the mean of the window values before it; after a firing
// the next eligible index is i + cooldown + 1.
std::vector<CaptureEvent> detect_triggers(const std::vector<double>& lumas,
                                          const TriggerConfig& cfg);

struct CapturedFrames {
  CaptureEvent event;
  std::vector<Frame> frames;  // aligned with event.frame_indices
};

// Streaming counterpart of detect_triggers: feed frames one at a time, frame
// copies are pulled out of the ring as the wanted indices arrive.
class CaptureSession {
 public:
  CaptureSession(std::size_t ring_capacity, TriggerConfig cfg);

  void push(const Frame& frame);
  // Completed events, in trigger order. Draining, callable repeatedly.
  std::vector<CapturedFrames> take_events();
  // Closes the stream; events still waiting on followups are emitted with
  // the frames collected so far.
  std::vector<CapturedFrames> finish();

  const FrameRing& ring() const { return ring_; }
  std::size_t frames_seen() const { return next_index_; }

 private:
  struct Pending {
    CapturedFrames out;
    std::vector<std::size_t> wanted;  // remaining indices, ascending
  };

  FrameRing ring_;
  TriggerConfig cfg_;
  std::deque<double> window_;
  std::vector<Pending> pending_;
  std::vector<CapturedFrames> done_;
  std::size_t next_index_ = 0;
  std::size_t next_eligible_ = 0;
};

// One simulated insect pass: ambient frames, then flash_count lit frames with
// the insect stepping across the field, then ambient tail.
struct TransitSpec {
  int frame_count = 16;
  int width = 96;
  int height = 96;
  int class_id = 0;
  int flash_start = 9;
  int flash_count = 3;
  int ambient_gray = 8;
  int flash_gray = 32;
  int noise = 3;
};

void validate(const TransitSpec& spec);

struct TransitResult {
  std::vector<Frame> frames;
  std::vector<std::size_t> flash_indices;
  std::vector<detect::Mask> masks;   // aligned with flash_indices
  std::vector<detect::BBox> boxes;   // tight boxes, aligned with flash_indices
};

TransitResult synth_transit(const TransitSpec& spec, rng::Generator& rng);

}  // namespace ento::imaging
