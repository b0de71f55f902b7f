#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "evpose/events.hpp"

namespace evpose {

// IO failure carrying the byte offset (binary) or line number (text) where
// parsing stopped.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, uint64_t where)
      : std::runtime_error(what), where_(where) {}
  uint64_t where() const { return where_; }

 private:
  uint64_t where_;
};

enum class EventFileFormat { kBinary, kText };

// Binary "EVT1": magic, u16 width, u16 height, u64 count, then packed
// little-endian records of u16 u, u16 v, u64 t, i8 polarity.
// Text: a {"width":W,"height":H} header line, then one
// {"u":..,"v":..,"t":..,"p":..} object per line.
EventStream read_events(const std::string& path);
void write_events(const EventStream& stream, const std::string& path,
                  EventFileFormat format);

// Pose label file: one line per frame, a JSON array of [x, y, visible]
// triples, coordinates in input pixels.
std::vector<Pose> read_pose_file(const std::string& path);
void write_pose_file(const std::vector<Pose>& poses, const std::string& path);

}  // namespace evpose
