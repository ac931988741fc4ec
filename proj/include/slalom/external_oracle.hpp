#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "slalom/core.hpp"
#include "slalom/oracles.hpp"

namespace slalom {

struct ExternalOptions {
  std::chrono::milliseconds timeout{30000};
  /// When set, requests carry token strings ("tokens") instead of ids.
  std::optional<Vocabulary> send_tokens;
  /// Log odds from a logits response are logits[positive] - logits[negative].
  std::size_t positive_class = 1;
  std::size_t negative_class = 0;

  /// Defaults with the timeout taken from SLALOM_ORACLE_TIMEOUT_MS if set.
  static ExternalOptions from_environment();
};

/// Client for a model served over newline-delimited JSON (protocol version 1),
/// either on a child process's stdio or on a TCP socket.
///
/// Requests are tagged with increasing ids and may be pipelined; a reader
/// thread matches responses by id, so the remote side may answer out of order.
/// Safe for concurrent callers. The remote model is not assumed to be pure.
class ExternalOracle final : public Oracle {
 public:
  /// "exec:<command line>" or "tcp:<host>:<port>".
  static std::unique_ptr<ExternalOracle> connect(const std::string& endpoint, ExternalOptions options = {});
  static std::unique_ptr<ExternalOracle> spawn(const std::vector<std::string>& argv, ExternalOptions options = {});
  static std::unique_ptr<ExternalOracle> connect_tcp(const std::string& host, std::uint16_t port,
                                                     ExternalOptions options = {});

  ~ExternalOracle() override;
  ExternalOracle(const ExternalOracle&) = delete;
  ExternalOracle& operator=(const ExternalOracle&) = delete;

  double score(TokenView seq) const override;
  std::vector<double> score_batch(std::span<const TokenSeq> seqs) const override;

  /// Raw response frame for one sequence.
  nlohmann::json request(TokenView seq) const;

  std::size_t classes() const noexcept { return classes_; }

 private:
  ExternalOracle(int read_fd, int write_fd, int child_pid, bool socket, ExternalOptions options);

  void handshake();
  void start_reader();
  void reader_loop();
  void fail_pending(ErrorCode code, const std::string& message);
  void write_line(const std::string& line) const;
  std::future<nlohmann::json> submit(TokenView seq) const;
  nlohmann::json await(std::future<nlohmann::json>& fut) const;
  double log_odds_from(const nlohmann::json& frame) const;
  std::optional<std::string> read_line(std::chrono::milliseconds timeout);

  int read_fd_;
  int write_fd_;
  int child_pid_;
  bool socket_;
  ExternalOptions options_;
  std::size_t classes_ = 2;

  std::string buffer_;
  std::thread reader_;
  std::atomic<bool> stopping_{false};

  mutable std::mutex write_mutex_;
  mutable std::mutex pending_mutex_;
  mutable std::map<std::uint64_t, std::promise<nlohmann::json>> pending_;
  mutable std::uint64_t next_id_ = 1;
  mutable std::optional<Error> broken_;
};

}  // namespace slalom
