#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace evpose {

// A single brightness-change record. Timestamps are integer microseconds.
struct Event {
  int u = 0;          // column, 0 <= u < sensor width
  int v = 0;          // row, 0 <= v < sensor height
  uint64_t t = 0;     // microseconds
  int polarity = 1;   // -1 or +1
};

struct EventStream {
  int width = 0;
  int height = 0;
  std::vector<Event> events;  // sorted non-decreasing in t
};

// Two-channel per-pixel event-count histogram over [t_start, t_end).
// Channel 0 holds negative-polarity counts, channel 1 positive.
class EventFrame {
 public:
  EventFrame() = default;
  EventFrame(int width, int height, uint64_t t_start, uint64_t t_end);

  int width() const { return width_; }
  int height() const { return height_; }
  uint64_t t_start() const { return t_start_; }
  uint64_t t_end() const { return t_end_; }

  float& at(int channel, int y, int x) {
    return grid_[(static_cast<size_t>(channel) * height_ + y) * width_ + x];
  }
  float at(int channel, int y, int x) const {
    return grid_[(static_cast<size_t>(channel) * height_ + y) * width_ + x];
  }
  const std::vector<float>& grid() const { return grid_; }
  std::vector<float>& grid() { return grid_; }

  double sum() const;

 private:
  int width_ = 0;
  int height_ = 0;
  uint64_t t_start_ = 0;
  uint64_t t_end_ = 0;
  std::vector<float> grid_;  // 2 * height * width, channel-major
};

// One joint: position in input-image pixels plus a visibility flag.
struct Joint {
  double x = 0.0;
  double y = 0.0;
  bool visible = false;
};

struct Pose {
  std::vector<Joint> joints;
  int joint_count() const { return static_cast<int>(joints.size()); }
};

// A clip of consecutive frames tiling time exactly, with optional labels.
struct FrameSequence {
  std::vector<EventFrame> frames;
  std::optional<std::vector<Pose>> poses;  // same length as frames when set
  uint64_t frame_interval_us = 0;
};

// Splits a sorted stream into contiguous fixed-interval packets starting at
// t0. Empty packets between occupied ones are kept. When t_end is given the
// packet count is ceil((t_end - t0) / interval) and events at or beyond
// t_end are rejected; otherwise the count is derived from the last event
// (an empty stream yields no packets).
std::vector<std::vector<Event>> slice_packets(
    const EventStream& stream, uint64_t interval_us, uint64_t t0,
    std::optional<uint64_t> t_end = std::nullopt);

// Per-polarity pixel-wise histogram of one packet.
EventFrame accumulate_frame(const std::vector<Event>& packet, int width,
                            int height, uint64_t t_start, uint64_t t_end);

// Clips counts at count_cap and rescales to [0, 1].
EventFrame normalize_frame(const EventFrame& frame, int count_cap);

// Translation applied by a crop: output (x, y) samples input (x+dx, y+dy).
struct CropTransform {
  int dx = 0;
  int dy = 0;
  void apply(double& x, double& y) const { x -= dx; y -= dy; }
  Pose apply(const Pose& pose) const;
};

CropTransform crop_transform(int center_x, int center_y, int size);

// size x size crop with center mapped to (size/2, size/2); overhang is
// zero-padded.
EventFrame crop_frame(const EventFrame& frame, int center_x, int center_y,
                      int size);

// Count-weighted mean coordinate, rounded to nearest integer; the frame
// center is the fallback when nothing fired.
std::pair<int, int> event_centroid(const EventFrame& frame);
std::pair<int, int> event_centroid(const std::vector<Event>& packet, int width,
                                   int height);

}  // namespace evpose
