#include "evpose/events.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace evpose {

EventFrame::EventFrame(int width, int height, uint64_t t_start, uint64_t t_end)
    : width_(width),
      height_(height),
      t_start_(t_start),
      t_end_(t_end),
      grid_(static_cast<size_t>(2) * width * height, 0.0f) {
  if (width <= 0 || height <= 0)
    throw std::invalid_argument("EventFrame: non-positive dimensions");
  if (!(t_start < t_end))
    throw std::invalid_argument("EventFrame: t_start must precede t_end");
}

double EventFrame::sum() const {
  return std::accumulate(grid_.begin(), grid_.end(), 0.0);
}

std::vector<std::vector<Event>> slice_packets(const EventStream& stream,
                                              uint64_t interval_us, uint64_t t0,
                                              std::optional<uint64_t> t_end) {
  if (interval_us == 0)
    throw std::invalid_argument("slice_packets: interval must be positive");
  if (!stream.events.empty() && stream.events.front().t < t0)
    throw std::invalid_argument("slice_packets: t0 exceeds first event");

  size_t count = 0;
  if (t_end.has_value()) {
    if (*t_end < t0) throw std::invalid_argument("slice_packets: t_end < t0");
    count = static_cast<size_t>((*t_end - t0 + interval_us - 1) / interval_us);
  } else if (!stream.events.empty()) {
    count = static_cast<size_t>((stream.events.back().t - t0) / interval_us) + 1;
  }

  std::vector<std::vector<Event>> packets(count);
  uint64_t prev_t = 0;
  for (size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (i > 0 && e.t < prev_t)
      throw std::invalid_argument("slice_packets: unsorted stream at index " +
                                  std::to_string(i));
    prev_t = e.t;
    size_t idx = static_cast<size_t>((e.t - t0) / interval_us);
    if (idx >= count)
      throw std::invalid_argument("slice_packets: event at index " +
                                  std::to_string(i) + " beyond t_end");
    packets[idx].push_back(e);
  }
  return packets;
}

EventFrame accumulate_frame(const std::vector<Event>& packet, int width,
                            int height, uint64_t t_start, uint64_t t_end) {
  EventFrame frame(width, height, t_start, t_end);
  for (size_t i = 0; i < packet.size(); ++i) {
    const Event& e = packet[i];
    if (e.u < 0 || e.u >= width || e.v < 0 || e.v >= height)
      throw std::invalid_argument("accumulate_frame: event at index " +
                                  std::to_string(i) + " out of bounds");
    if (e.polarity != -1 && e.polarity != 1)
      throw std::invalid_argument("accumulate_frame: event at index " +
                                  std::to_string(i) + " has bad polarity");
    frame.at(e.polarity > 0 ? 1 : 0, e.v, e.u) += 1.0f;
  }
  return frame;
}

EventFrame normalize_frame(const EventFrame& frame, int count_cap) {
  if (count_cap < 1)
    throw std::invalid_argument("normalize_frame: count_cap must be >= 1");
  EventFrame out = frame;
  const float cap = static_cast<float>(count_cap);
  for (float& v : out.grid()) v = std::min(v, cap) / cap;
  return out;
}

Pose CropTransform::apply(const Pose& pose) const {
  Pose out = pose;
  for (Joint& j : out.joints) apply(j.x, j.y);
  return out;
}

CropTransform crop_transform(int center_x, int center_y, int size) {
  if (size <= 0) throw std::invalid_argument("crop: size must be positive");
  return CropTransform{center_x - size / 2, center_y - size / 2};
}

EventFrame crop_frame(const EventFrame& frame, int center_x, int center_y,
                      int size) {
  CropTransform tf = crop_transform(center_x, center_y, size);
  EventFrame out(size, size, frame.t_start(), frame.t_end());
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y < size; ++y) {
      int sy = y + tf.dy;
      if (sy < 0 || sy >= frame.height()) continue;
      for (int x = 0; x < size; ++x) {
        int sx = x + tf.dx;
        if (sx < 0 || sx >= frame.width()) continue;
        out.at(c, y, x) = frame.at(c, sy, sx);
      }
    }
  }
  return out;
}

std::pair<int, int> event_centroid(const EventFrame& frame) {
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < frame.height(); ++y)
      for (int x = 0; x < frame.width(); ++x) {
        float w = frame.at(c, y, x);
        total += w;
        sx += w * x;
        sy += w * y;
      }
  if (total <= 0.0) return {frame.width() / 2, frame.height() / 2};
  return {static_cast<int>(std::lround(sx / total)),
          static_cast<int>(std::lround(sy / total))};
}

std::pair<int, int> event_centroid(const std::vector<Event>& packet, int width,
                                   int height) {
  if (packet.empty()) return {width / 2, height / 2};
  double sx = 0.0, sy = 0.0;
  for (const Event& e : packet) {
    sx += e.u;
    sy += e.v;
  }
  return {static_cast<int>(std::lround(sx / packet.size())),
          static_cast<int>(std::lround(sy / packet.size()))};
}

}  // namespace evpose
