#include "evpose/event_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace evpose {

namespace {

constexpr char kMagic[4] = {'E', 'V', 'T', '1'};
constexpr size_t kRecordSize = 2 + 2 + 8 + 1;

template <typename T>
void put_le(std::string& out, T value) {
  for (size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<uint64_t>(value) >> (8 * i)) &
                                    0xff));
}

template <typename T>
T get_le(const char* p) {
  uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return static_cast<T>(v);
}

void validate_stream(EventStream& s, const std::string& path) {
  uint64_t prev_t = 0;
  for (size_t i = 0; i < s.events.size(); ++i) {
    const Event& e = s.events[i];
    if (e.u < 0 || e.u >= s.width || e.v < 0 || e.v >= s.height)
      throw FormatError(path + ": event " + std::to_string(i) +
                            " out of sensor bounds",
                        i);
    if (e.polarity != -1 && e.polarity != 1)
      throw FormatError(path + ": event " + std::to_string(i) +
                            " has polarity outside {-1,+1}",
                        i);
    if (i > 0 && e.t < prev_t)
      throw FormatError(
          path + ": timestamps not sorted at event " + std::to_string(i), i);
    prev_t = e.t;
  }
}

EventStream read_binary(const std::string& path, std::ifstream& in) {
  std::array<char, 16> header;
  in.read(header.data(), header.size());
  if (in.gcount() < static_cast<std::streamsize>(header.size()) ||
      std::memcmp(header.data(), kMagic, 4) != 0)
    throw FormatError(path + ": bad magic at offset 0", 0);

  EventStream s;
  s.width = get_le<uint16_t>(header.data() + 4);
  s.height = get_le<uint16_t>(header.data() + 6);
  uint64_t count = get_le<uint64_t>(header.data() + 8);

  s.events.reserve(count);
  std::vector<char> buf(kRecordSize);
  for (uint64_t i = 0; i < count; ++i) {
    in.read(buf.data(), kRecordSize);
    if (in.gcount() < static_cast<std::streamsize>(kRecordSize))
      throw FormatError(path + ": truncated record at offset " +
                            std::to_string(16 + i * kRecordSize),
                        16 + i * kRecordSize);
    Event e;
    e.u = get_le<uint16_t>(buf.data());
    e.v = get_le<uint16_t>(buf.data() + 2);
    e.t = get_le<uint64_t>(buf.data() + 4);
    e.polarity = static_cast<int8_t>(buf[12]);
    s.events.push_back(e);
  }
  validate_stream(s, path);
  return s;
}

EventStream read_text(const std::string& path, std::ifstream& in) {
  EventStream s;
  std::string line;
  uint64_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw FormatError(path + ": bad JSON on line " + std::to_string(line_no),
                        line_no);
    if (!have_header) {
      if (!j.contains("width") || !j.contains("height"))
        throw FormatError(path + ": missing header on line 1", line_no);
      s.width = j["width"].get<int>();
      s.height = j["height"].get<int>();
      have_header = true;
      continue;
    }
    for (const char* key : {"u", "v", "t", "p"})
      if (!j.contains(key))
        throw FormatError(path + ": missing field '" + key + "' on line " +
                              std::to_string(line_no),
                          line_no);
    Event e;
    e.u = j["u"].get<int>();
    e.v = j["v"].get<int>();
    e.t = j["t"].get<uint64_t>();
    e.polarity = j["p"].get<int>();
    s.events.push_back(e);
  }
  if (!have_header)
    throw FormatError(path + ": empty file, expected header line", 0);
  validate_stream(s, path);
  return s;
}

}  // namespace

EventStream read_events(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open", 0);
  char first = 0;
  in.get(first);
  in.seekg(0);
  if (first == '{') return read_text(path, in);
  return read_binary(path, in);
}

void write_events(const EventStream& stream, const std::string& path,
                  EventFileFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing", 0);
  if (format == EventFileFormat::kBinary) {
    std::string buf;
    buf.reserve(16 + stream.events.size() * kRecordSize);
    buf.append(kMagic, 4);
    put_le<uint16_t>(buf, static_cast<uint16_t>(stream.width));
    put_le<uint16_t>(buf, static_cast<uint16_t>(stream.height));
    put_le<uint64_t>(buf, stream.events.size());
    for (const Event& e : stream.events) {
      put_le<uint16_t>(buf, static_cast<uint16_t>(e.u));
      put_le<uint16_t>(buf, static_cast<uint16_t>(e.v));
      put_le<uint64_t>(buf, e.t);
      buf.push_back(static_cast<char>(static_cast<int8_t>(e.polarity)));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  } else {
    out << "{\"width\":" << stream.width << ",\"height\":" << stream.height
        << "}\n";
    for (const Event& e : stream.events)
      out << "{\"u\":" << e.u << ",\"v\":" << e.v << ",\"t\":" << e.t
          << ",\"p\":" << e.polarity << "}\n";
  }
  if (!out) throw FormatError(path + ": write failed", 0);
}

std::vector<Pose> read_pose_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open", 0);
  std::vector<Pose> poses;
  std::string line;
  uint64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_array())
      throw FormatError(path + ": bad pose line " + std::to_string(line_no),
                        line_no);
    Pose p;
    for (const auto& entry : j) {
      if (!entry.is_array() || entry.size() != 3)
        throw FormatError(path + ": bad joint entry on line " +
                              std::to_string(line_no),
                          line_no);
      Joint joint;
      joint.x = entry[0].get<double>();
      joint.y = entry[1].get<double>();
      joint.visible = entry[2].get<int>() != 0;
      p.joints.push_back(joint);
    }
    poses.push_back(std::move(p));
  }
  return poses;
}

void write_pose_file(const std::vector<Pose>& poses, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing", 0);
  for (const Pose& p : poses) {
    nlohmann::json j = nlohmann::json::array();
    for (const Joint& joint : p.joints)
      j.push_back({joint.x, joint.y, joint.visible ? 1 : 0});
    out << j.dump() << "\n";
  }
  if (!out) throw FormatError(path + ": write failed", 0);
}

}  // namespace evpose
