// Copyright 2026 The phonsal Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// 16-bit PCM readers for RIFF/WAVE and NIST SPHERE (the format TIMIT ships
// under a .WAV extension). Format is detected from the file magic.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "phonsal/features.hpp"

namespace phonsal {

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t le32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline std::vector<double> decode_pcm16(const unsigned char* p, std::size_t n_samples,
                                        std::size_t channels, bool big_endian) {
  std::vector<double> out(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const unsigned char* s = p + i * channels * 2;  // first channel only
    const auto v = static_cast<std::int16_t>(
        big_endian ? (s[0] << 8) | s[1] : (s[1] << 8) | s[0]);
    out[i] = v / 32768.0;
  }
  return out;
}

}  // namespace detail

inline Waveform parse_wav(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw ParseError("not a RIFF/WAVE file");
  std::size_t pos = 12;
  int channels = 0, sample_rate = 0, bits = 0, format = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t len = detail::le32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + len > bytes.size()) throw ParseError("truncated WAV chunk");
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (len < 16) throw ParseError("short fmt chunk");
      format = detail::le16(body);
      channels = detail::le16(body + 2);
      sample_rate = static_cast<int>(detail::le32(body + 4));
      bits = detail::le16(body + 14);
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (format != 1 || bits != 16 || channels < 1)
        throw ParseError("only 16-bit PCM WAV is supported");
      Waveform w;
      w.sample_rate = sample_rate;
      w.samples = detail::decode_pcm16(body, len / (2 * channels), channels, false);
      return w;
    }
    pos += 8 + len + (len & 1);
  }
  throw ParseError("WAV file has no data chunk");
}

inline Waveform parse_sphere(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "NIST_1A", 7) != 0)
    throw ParseError("not a NIST SPHERE file");
  std::string head(bytes.begin(), bytes.begin() + std::min<std::size_t>(bytes.size(), 1024));
  std::istringstream lines(head);
  std::string line;
  std::getline(lines, line);  // NIST_1A
  std::getline(lines, line);
  const std::size_t header_size = std::stoul(line);
  std::map<std::string, std::string> fields;
  while (std::getline(lines, line)) {
    if (line.rfind("end_head", 0) == 0) break;
    std::istringstream ls(line);
    std::string key, type, value;
    if (ls >> key >> type) {
      std::getline(ls >> std::ws, value);
      fields[key] = value;
    }
  }
  auto field = [&](const std::string& k, const std::string& dflt) {
    const auto it = fields.find(k);
    return it == fields.end() ? dflt : it->second;
  };
  const std::string coding = field("sample_coding", "pcm");
  if (coding.rfind("pcm", 0) != 0 || coding.find("shorten") != std::string::npos)
    throw ParseError("unsupported SPHERE sample_coding: " + coding);
  if (field("sample_n_bytes", "2") != "2")
    throw ParseError("only 16-bit SPHERE audio is supported");
  const std::size_t channels = std::stoul(field("channel_count", "1"));
  const std::string order = field("sample_byte_format", "01");
  if (order != "01" && order != "10")
    throw ParseError("unsupported sample_byte_format: " + order);
  if (bytes.size() < header_size) throw ParseError("truncated SPHERE header");
  std::size_t n = (bytes.size() - header_size) / (2 * channels);
  const std::string count = field("sample_count", "");
  if (!count.empty()) n = std::min<std::size_t>(n, std::stoul(count));
  Waveform w;
  w.sample_rate = std::stoi(field("sample_rate", "16000"));
  w.samples = detail::decode_pcm16(bytes.data() + header_size, n, channels, order == "10");
  return w;
}

inline Waveform read_audio(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  if (bytes.size() >= 7 && std::memcmp(bytes.data(), "NIST_1A", 7) == 0)
    return parse_sphere(bytes);
  return parse_wav(bytes);
}

namespace detail {
inline std::int16_t to_pcm16(double s) {
  return static_cast<std::int16_t>(std::clamp(std::lround(s * 32767.0), -32768L, 32767L));
}
}  // namespace detail

inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  auto put32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  auto put16 = [&](std::uint16_t v) {
    out.put(static_cast<char>(v & 0xff));
    out.put(static_cast<char>(v >> 8));
  };
  const auto data_len = static_cast<std::uint32_t>(w.samples.size() * 2);
  out.write("RIFF", 4);
  put32(36 + data_len);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(1);
  put16(1);
  put32(static_cast<std::uint32_t>(w.sample_rate));
  put32(static_cast<std::uint32_t>(w.sample_rate * 2));
  put16(2);
  put16(16);
  out.write("data", 4);
  put32(data_len);
  for (double s : w.samples) put16(static_cast<std::uint16_t>(detail::to_pcm16(s)));
}

/// Writes a TIMIT-style SPHERE file; `big_endian` selects byte format "10".
inline void write_sphere(const std::filesystem::path& path, const Waveform& w,
                         bool big_endian = false) {
  std::ostringstream h;
  h << "NIST_1A\n   1024\n"
    << "sample_count -i " << w.samples.size() << "\n"
    << "sample_rate -i " << w.sample_rate << "\n"
    << "channel_count -i 1\n"
    << "sample_byte_format -s2 " << (big_endian ? "10" : "01") << "\n"
    << "sample_n_bytes -i 2\n"
    << "sample_sig_bits -i 16\n"
    << "sample_coding -s3 pcm\n"
    << "end_head\n";
  std::string header = h.str();
  header.resize(1024, ' ');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (double s : w.samples) {
    const auto v = static_cast<std::uint16_t>(detail::to_pcm16(s));
    const char lo = static_cast<char>(v & 0xff), hi = static_cast<char>(v >> 8);
    out.put(big_endian ? hi : lo);
    out.put(big_endian ? lo : hi);
  }
}

}  // namespace phonsal
