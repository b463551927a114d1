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

// JSON-lines wire protocol for external model processes.
//
//   -> {"id": u64, "op": "transcribe", "features": [[f32,...],...]}
//   <- {"id": u64, "tokens": [{"id": int, "text": str, "begins_word": bool}]}
//   -> {"id": u64, "op": "score", "prefix": [int], "target": int,
//       "features_batch": [[[f32,...],...], ...]}
//   <- {"id": u64, "probs": [f64, ...]}
//   <- {"id": u64, "error": str}
//
// Features are row-major (T rows of F values). Responses may arrive out of
// order; the clients match them to requests by id.

#pragma once

#include <atomic>
#include <charconv>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>
#include <json.hpp>

// resolv.h (via httplib) defines _res, which clashes with Eigen parameter
// names in any later include. httplib itself does not use it.
#ifdef _res
#undef _res
#endif

#include "phonsal/backend.hpp"

namespace phonsal {

namespace protocol {

using nlohmann::json;

namespace detail {

inline void append_float(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, static_cast<float>(v));
  out.append(buf, res.ptr);
}

inline void append_matrix(std::string& out, const Matrix<double>& m) {
  out.push_back('[');
  for (std::size_t t = 0; t < m.rows(); ++t) {
    if (t) out.push_back(',');
    out.push_back('[');
    const auto row = m.row(t);
    for (std::size_t f = 0; f < row.size(); ++f) {
      if (f) out.push_back(',');
      append_float(out, row[f]);
    }
    out.push_back(']');
  }
  out.push_back(']');
}

}  // namespace detail

/// Request lines are built by hand: a score request for 128 masked copies of
/// a 300x80 utterance is three million numbers, and shortest-form float
/// formatting keeps that manageable.
inline std::string encode_transcribe(std::uint64_t id, const Matrix<double>& features) {
  std::string out = "{\"id\":" + std::to_string(id) + ",\"op\":\"transcribe\",\"features\":";
  detail::append_matrix(out, features);
  out += "}";
  return out;
}

inline std::string encode_score(std::uint64_t id, const ScoreBatch& batch) {
  std::string out = "{\"id\":" + std::to_string(id) + ",\"op\":\"score\",\"prefix\":[";
  for (std::size_t i = 0; i < batch.prefix.size(); ++i) {
    if (i) out.push_back(',');
    out += std::to_string(batch.prefix[i]);
  }
  out += "],\"target\":" + std::to_string(batch.target) + ",\"features_batch\":[";
  for (std::size_t k = 0; k < batch.features.size(); ++k) {
    if (k) out.push_back(',');
    detail::append_matrix(out, batch.features[k]);
  }
  out += "]}";
  return out;
}

inline Matrix<double> matrix_from_json(const json& j) {
  if (!j.is_array()) throw ProtocolError("features must be an array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = rows ? j[0].size() : 0;
  Matrix<double> m(rows, cols);
  for (std::size_t t = 0; t < rows; ++t) {
    if (!j[t].is_array() || j[t].size() != cols)
      throw ProtocolError("ragged feature matrix");
    for (std::size_t f = 0; f < cols; ++f) m(t, f) = j[t][f].get<double>();
  }
  return m;
}

inline json tokens_to_json(const TokenSequence& tokens) {
  json arr = json::array();
  for (const auto& t : tokens)
    arr.push_back({{"id", t.id}, {"text", t.text}, {"begins_word", t.begins_word}});
  return arr;
}

inline std::uint64_t response_id(const json& j) {
  if (!j.is_object() || !j.contains("id") || !j["id"].is_number_unsigned())
    throw ProtocolError("response without a valid id");
  return j["id"].get<std::uint64_t>();
}

inline void throw_if_error(const json& j) {
  if (j.contains("error"))
    throw ProtocolError("backend error: " +
                        (j["error"].is_string() ? j["error"].get<std::string>()
                                                : j["error"].dump()));
}

inline TokenSequence decode_tokens(const json& j) {
  throw_if_error(j);
  if (!j.contains("tokens") || !j["tokens"].is_array())
    throw ProtocolError("transcribe response without tokens");
  TokenSequence out;
  for (const auto& t : j["tokens"]) {
    if (!t.is_object() || !t.contains("id") || !t.contains("text") ||
        !t.contains("begins_word") || !t["id"].is_number_integer() ||
        !t["text"].is_string() || !t["begins_word"].is_boolean())
      throw ProtocolError("malformed token: " + t.dump());
    out.push_back({t["id"].get<int>(), t["text"].get<std::string>(),
                   t["begins_word"].get<bool>()});
  }
  if (!out.empty() && !out.front().begins_word)
    throw ProtocolError("first token must begin a word");
  return out;
}

inline std::vector<double> decode_probs(const json& j, std::size_t expected) {
  throw_if_error(j);
  if (!j.contains("probs") || !j["probs"].is_array())
    throw ProtocolError("score response without probs");
  std::vector<double> probs;
  for (const auto& p : j["probs"]) {
    if (p.is_null()) throw ProtocolError("backend returned NaN probability");
    if (!p.is_number()) throw ProtocolError("non-numeric probability");
    probs.push_back(p.get<double>());
  }
  check_probabilities(probs, expected);
  return probs;
}

/// Answers one request line with `backend`. This is the server half of the
/// protocol; malformed requests produce an error response carrying the
/// request id when one can be recovered.
inline std::string serve_line(Backend& backend, std::string_view line) {
  json out;
  std::uint64_t id = 0;
  try {
    const json req = json::parse(line);
    if (!req.is_object() || !req.contains("id") || !req["id"].is_number_unsigned())
      throw ProtocolError("request without a valid id");
    id = req["id"].get<std::uint64_t>();
    out["id"] = id;
    const std::string op = req.value("op", "");
    if (op == "transcribe") {
      MelSpectrogram x;
      x.values = matrix_from_json(req.at("features"));
      x.cmvn_applied = true;
      out["tokens"] = tokens_to_json(backend.transcribe(x));
    } else if (op == "score") {
      ScoreBatch batch;
      batch.prefix = req.at("prefix").get<std::vector<int>>();
      batch.target = req.at("target").get<int>();
      for (const auto& m : req.at("features_batch"))
        batch.features.push_back(matrix_from_json(m));
      out["probs"] = backend.score_batch(batch);
    } else {
      throw ProtocolError("unknown op '" + op + "'");
    }
  } catch (const std::exception& e) {
    out = json{{"id", id}, {"error", e.what()}};
  }
  return out.dump();
}

}  // namespace protocol

/// Speaks the protocol to a child process over its stdin/stdout. Requests
/// from several threads are multiplexed; a reader thread routes responses
/// back by id.
class ProcessBackend : public Backend {
 public:
  explicit ProcessBackend(const std::string& command, std::size_t max_batch = kDefaultMaxBatch)
      : max_batch_(max_batch) {
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw TransportError("pipe() failed");
    pid_ = ::fork();
    if (pid_ < 0) throw TransportError("fork() failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    ::fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    ::fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
    reader_ = std::thread([this] { read_loop(); });
  }

  ProcessBackend(const ProcessBackend&) = delete;
  ProcessBackend& operator=(const ProcessBackend&) = delete;

  ~ProcessBackend() override {
    {
      std::lock_guard lock(write_mu_);
      if (write_fd_ >= 0) ::close(write_fd_);
      write_fd_ = -1;
    }
    if (reader_.joinable()) reader_.join();
    ::close(read_fd_);
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }

  std::size_t max_batch() const override { return max_batch_; }

  TokenSequence transcribe(const MelSpectrogram& features) override {
    check_transcribe_input(features);
    const std::uint64_t id = next_id_++;
    return protocol::decode_tokens(roundtrip(id, protocol::encode_transcribe(id, features.values)));
  }

  std::vector<double> score_batch(const ScoreBatch& batch) override {
    check_score_batch(batch, max_batch_);
    if (batch.features.empty()) return {};
    const std::uint64_t id = next_id_++;
    return protocol::decode_probs(roundtrip(id, protocol::encode_score(id, batch)),
                                  batch.features.size());
  }

 private:
  nlohmann::json roundtrip(std::uint64_t id, std::string line) {
    std::future<nlohmann::json> reply;
    {
      std::lock_guard lock(pending_mu_);
      if (closed_) throw TransportError("backend process has exited");
      reply = pending_[id].get_future();
    }
    line.push_back('\n');
    {
      std::lock_guard lock(write_mu_);
      std::size_t off = 0;
      while (off < line.size()) {
        const ssize_t n = write_fd_ < 0 ? -1 : ::write(write_fd_, line.data() + off, line.size() - off);
        if (n <= 0) {
          std::lock_guard plock(pending_mu_);
          pending_.erase(id);
          throw TransportError("failed writing to backend process");
        }
        off += static_cast<std::size_t>(n);
      }
    }
    return reply.get();
  }

  void read_loop() {
    std::string buf;
    char chunk[65536];
    for (;;) {
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n <= 0) break;
      buf.append(chunk, static_cast<std::size_t>(n));
      std::size_t start = 0;
      for (std::size_t nl; (nl = buf.find('\n', start)) != std::string::npos; start = nl + 1)
        dispatch(std::string_view(buf).substr(start, nl - start));
      buf.erase(0, start);
    }
    std::lock_guard lock(pending_mu_);
    closed_ = true;
    for (auto& [id, promise] : pending_)
      promise.set_exception(std::make_exception_ptr(
          TransportError("backend process closed its output (request " + std::to_string(id) + ")")));
    pending_.clear();
  }

  void dispatch(std::string_view line) {
    if (line.empty()) return;
    nlohmann::json j;
    std::uint64_t id = 0;
    try {
      j = nlohmann::json::parse(line);
      id = protocol::response_id(j);
    } catch (const std::exception& e) {
      // An unparseable line cannot be routed; fail every waiter.
      std::lock_guard lock(pending_mu_);
      for (auto& [pid, promise] : pending_)
        promise.set_exception(std::make_exception_ptr(
            ProtocolError(std::string("unparseable backend output: ") + e.what())));
      pending_.clear();
      return;
    }
    std::lock_guard lock(pending_mu_);
    const auto it = pending_.find(id);
    if (it == pending_.end()) return;
    it->second.set_value(std::move(j));
    pending_.erase(it);
  }

  std::size_t max_batch_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  std::thread reader_;
  std::mutex write_mu_;
  std::mutex pending_mu_;
  bool closed_ = false;
  std::map<std::uint64_t, std::promise<nlohmann::json>> pending_;
  std::atomic<std::uint64_t> next_id_{1};
};

/// Same protocol, one request line per HTTP POST body.
class HttpBackend : public Backend {
 public:
  HttpBackend(std::string base_url, std::string path, std::size_t max_batch = kDefaultMaxBatch)
      : base_url_(std::move(base_url)), path_(std::move(path)), max_batch_(max_batch) {}

  std::size_t max_batch() const override { return max_batch_; }

  TokenSequence transcribe(const MelSpectrogram& features) override {
    check_transcribe_input(features);
    const std::uint64_t id = next_id_++;
    return protocol::decode_tokens(post(id, protocol::encode_transcribe(id, features.values)));
  }

  std::vector<double> score_batch(const ScoreBatch& batch) override {
    check_score_batch(batch, max_batch_);
    if (batch.features.empty()) return {};
    const std::uint64_t id = next_id_++;
    return protocol::decode_probs(post(id, protocol::encode_score(id, batch)),
                                  batch.features.size());
  }

 private:
  nlohmann::json post(std::uint64_t id, const std::string& body) {
    httplib::Client client(base_url_);
    client.set_read_timeout(600, 0);
    const auto res = client.Post(path_, body, "application/json");
    if (!res) throw TransportError("HTTP backend unreachable at " + base_url_);
    if (res->status != 200)
      throw TransportError("HTTP backend returned status " + std::to_string(res->status));
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(res->body);
    } catch (const std::exception& e) {
      throw ProtocolError(std::string("unparseable backend output: ") + e.what());
    }
    if (protocol::response_id(j) != id) throw ProtocolError("response id mismatch");
    return j;
  }

  std::string base_url_;
  std::string path_;
  std::size_t max_batch_;
  std::atomic<std::uint64_t> next_id_{1};
};

/// Builds a remote backend from "exec:<shell command>" or
/// "http://host:port[/path]". Oracle specs are resolved by the pipeline.
inline std::unique_ptr<Backend> make_remote_backend(const std::string& spec,
                                                    std::size_t max_batch = kDefaultMaxBatch) {
  if (spec.rfind("exec:", 0) == 0)
    return std::make_unique<ProcessBackend>(spec.substr(5), max_batch);
  if (spec.rfind("http://", 0) == 0) {
    const auto slash = spec.find('/', 7);
    const std::string base = slash == std::string::npos ? spec : spec.substr(0, slash);
    const std::string path = slash == std::string::npos ? "/" : spec.substr(slash);
    return std::make_unique<HttpBackend>(base, path, max_batch);
  }
  throw InvalidArgument("unknown backend spec '" + spec + "'");
}

}  // namespace phonsal
