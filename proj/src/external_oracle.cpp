#include "slalom/external_oracle.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <sstream>

namespace slalom {

using nlohmann::json;

ExternalOptions ExternalOptions::from_environment() {
  ExternalOptions options;
  if (const char* env = std::getenv("SLALOM_ORACLE_TIMEOUT_MS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const long long ms = std::strtoll(env, &end, 10);
    if (end == env || *end != '\0' || ms <= 0) {
      throw Error(ErrorCode::InvalidParams, "SLALOM_ORACLE_TIMEOUT_MS must be a positive integer");
    }
    options.timeout = std::chrono::milliseconds(ms);
  }
  return options;
}

namespace {

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

void ignore_sigpipe() {
  static const bool done = [] {
    ::signal(SIGPIPE, SIG_IGN);
    return true;
  }();
  (void)done;
}

}  // namespace

std::unique_ptr<ExternalOracle> ExternalOracle::connect(const std::string& endpoint, ExternalOptions options) {
  if (endpoint.rfind("exec:", 0) == 0) {
    auto argv = split_words(endpoint.substr(5));
    if (argv.empty()) throw Error(ErrorCode::InvalidParams, "exec endpoint needs a command");
    return spawn(argv, std::move(options));
  }
  if (endpoint.rfind("tcp:", 0) == 0) {
    const std::string rest = endpoint.substr(4);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::InvalidParams, "tcp endpoint must be tcp:<host>:<port>");
    const int port = std::atoi(rest.substr(colon + 1).c_str());
    if (port <= 0 || port > 65535) throw Error(ErrorCode::InvalidParams, "invalid port in '" + endpoint + "'");
    return connect_tcp(rest.substr(0, colon), static_cast<std::uint16_t>(port), std::move(options));
  }
  throw Error(ErrorCode::InvalidParams, "unknown endpoint '" + endpoint + "'");
}

std::unique_ptr<ExternalOracle> ExternalOracle::spawn(const std::vector<std::string>& argv, ExternalOptions options) {
  if (argv.empty()) throw Error(ErrorCode::InvalidParams, "empty command");
  ignore_sigpipe();
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0) throw Error(ErrorCode::OracleUnavailable, std::strerror(errno));
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw Error(ErrorCode::OracleUnavailable, std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorCode::OracleUnavailable, std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  ::fcntl(to_child[1], F_SETFD, FD_CLOEXEC);
  ::fcntl(from_child[0], F_SETFD, FD_CLOEXEC);
  std::unique_ptr<ExternalOracle> oracle(
      new ExternalOracle(from_child[0], to_child[1], static_cast<int>(pid), false, std::move(options)));
  oracle->handshake();
  oracle->start_reader();
  return oracle;
}

std::unique_ptr<ExternalOracle> ExternalOracle::connect_tcp(const std::string& host, std::uint16_t port,
                                                            ExternalOptions options) {
  ignore_sigpipe();
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  const std::string service = std::to_string(port);
  if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &found); rc != 0) {
    throw Error(ErrorCode::OracleUnavailable, std::string("resolve ") + host + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* ai = found; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(found);
  if (fd < 0) throw Error(ErrorCode::OracleUnavailable, "cannot connect to " + host + ":" + service);
  std::unique_ptr<ExternalOracle> oracle(new ExternalOracle(fd, fd, -1, true, std::move(options)));
  oracle->handshake();
  oracle->start_reader();
  return oracle;
}

ExternalOracle::ExternalOracle(int read_fd, int write_fd, int child_pid, bool socket, ExternalOptions options)
    : read_fd_(read_fd), write_fd_(write_fd), child_pid_(child_pid), socket_(socket), options_(std::move(options)) {}

ExternalOracle::~ExternalOracle() {
  try {
    write_line(json{{"op", "shutdown"}}.dump());
  } catch (...) {
  }
  if (socket_) {
    ::shutdown(write_fd_, SHUT_WR);
  } else {
    ::close(write_fd_);
  }
  // Give the remote side a moment to close on its own before we stop listening.
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(2);
  while (reader_.joinable() && std::chrono::steady_clock::now() < deadline) {
    {
      std::lock_guard lock(pending_mutex_);
      if (broken_) break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  stopping_ = true;
  if (reader_.joinable()) reader_.join();
  ::close(read_fd_);
  if (child_pid_ > 0) {
    int status = 0;
    for (int i = 0; i < 200; ++i) {
      if (::waitpid(child_pid_, &status, WNOHANG) != 0) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(child_pid_, SIGKILL);
    ::waitpid(child_pid_, &status, 0);
  }
}

void ExternalOracle::write_line(const std::string& line) const {
  std::lock_guard lock(write_mutex_);
  std::string data = line;
  data.push_back('\n');
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = socket_ ? ::send(write_fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL)
                              : ::write(write_fd_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::OracleUnavailable, std::string("write: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

std::optional<std::string> ExternalOracle::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw Error(ErrorCode::Timeout, "no response from oracle");
    pollfd pfd{read_fd_, POLLIN, 0};
    const int wait_ms = static_cast<int>(std::min<long long>(left.count(), 100));
    const int rc = ::poll(&pfd, 1, wait_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::OracleUnavailable, std::string("poll: ") + std::strerror(errno));
    }
    if (rc == 0) {
      if (stopping_) return std::nullopt;
      continue;
    }
    char chunk[4096];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::OracleUnavailable, std::string("read: ") + std::strerror(errno));
    }
    if (n == 0) return std::nullopt;
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void ExternalOracle::handshake() {
  write_line(json{{"op", "hello"}, {"version", 1}}.dump());
  const auto line = read_line(options_.timeout);
  if (!line) throw Error(ErrorCode::OracleUnavailable, "oracle closed the stream during handshake");
  json frame;
  try {
    frame = json::parse(*line);
  } catch (const json::exception&) {
    throw Error(ErrorCode::ProtocolError, "malformed handshake: " + *line);
  }
  if (frame.value("op", std::string()) != "hello" || frame.value("version", 0) != 1) {
    throw Error(ErrorCode::ProtocolError, "unexpected handshake: " + *line);
  }
  classes_ = frame.value("classes", std::size_t{2});
  if (classes_ < 2) throw Error(ErrorCode::ProtocolError, "handshake reports fewer than two classes: " + *line);
}

void ExternalOracle::start_reader() {
  reader_ = std::thread([this] { reader_loop(); });
}

void ExternalOracle::fail_pending(ErrorCode code, const std::string& message) {
  std::lock_guard lock(pending_mutex_);
  if (!broken_) broken_.emplace(code, message);
  for (auto& [id, promise] : pending_) promise.set_exception(std::make_exception_ptr(Error(code, message)));
  pending_.clear();
}

void ExternalOracle::reader_loop() {
  for (;;) {
    std::optional<std::string> line;
    try {
      line = read_line(std::chrono::hours(24 * 365));
    } catch (const Error& e) {
      fail_pending(e.code(), e.what());
      return;
    }
    if (!line) {
      fail_pending(ErrorCode::OracleUnavailable, "oracle closed the stream");
      return;
    }
    if (line->find_first_not_of(" \t") == std::string::npos) continue;
    json frame;
    try {
      frame = json::parse(*line);
    } catch (const json::exception&) {
      fail_pending(ErrorCode::ProtocolError, "malformed frame: " + *line);
      return;
    }
    const auto id_it = frame.find("id");
    if (!frame.is_object() || id_it == frame.end() || !id_it->is_number_unsigned()) {
      fail_pending(ErrorCode::ProtocolError, "frame without a request id: " + *line);
      return;
    }
    const auto id = id_it->get<std::uint64_t>();
    std::lock_guard lock(pending_mutex_);
    auto it = pending_.find(id);
    if (it == pending_.end()) continue;  // nobody is waiting on this id
    const auto op = frame.value("op", std::string());
    if (op == "error") {
      it->second.set_exception(std::make_exception_ptr(
          Error(ErrorCode::ProtocolError, "oracle error: " + frame.value("message", std::string("(no message)")))));
    } else if (op != "score") {
      it->second.set_exception(std::make_exception_ptr(Error(ErrorCode::ProtocolError, "unexpected frame: " + *line)));
    } else {
      it->second.set_value(std::move(frame));
    }
    pending_.erase(it);
  }
}

std::future<json> ExternalOracle::submit(TokenView seq) const {
  json req = {{"op", "score"}};
  if (options_.send_tokens) {
    std::vector<std::string> tokens;
    tokens.reserve(seq.size());
    for (TokenId id : seq) tokens.push_back(options_.send_tokens->token(id));
    req["tokens"] = tokens;
  } else {
    req["ids"] = std::vector<TokenId>(seq.begin(), seq.end());
  }
  std::future<json> fut;
  {
    std::lock_guard lock(pending_mutex_);
    if (broken_) throw *broken_;
    const std::uint64_t id = next_id_++;
    req["id"] = id;
    fut = pending_[id].get_future();
  }
  write_line(req.dump());
  return fut;
}

json ExternalOracle::await(std::future<json>& fut) const {
  if (fut.wait_for(options_.timeout) != std::future_status::ready) {
    throw Error(ErrorCode::Timeout, "oracle did not answer within " + std::to_string(options_.timeout.count()) + " ms");
  }
  return fut.get();
}

double ExternalOracle::log_odds_from(const json& frame) const {
  const bool has_odds = frame.contains("log_odds");
  const bool has_logits = frame.contains("logits");
  if (has_odds == has_logits) {
    throw Error(ErrorCode::ProtocolError, "score frame needs exactly one of log_odds/logits: " + frame.dump());
  }
  try {
    if (has_odds) {
      const double x = frame.at("log_odds").get<double>();
      if (!std::isfinite(x)) throw Error(ErrorCode::ProtocolError, "non-finite log odds: " + frame.dump());
      return x;
    }
    const auto logits = frame.at("logits").get<std::vector<double>>();
    if (options_.positive_class >= logits.size() || options_.negative_class >= logits.size()) {
      throw Error(ErrorCode::ProtocolError, "logits too short for the configured classes: " + frame.dump());
    }
    const double x = logits[options_.positive_class] - logits[options_.negative_class];
    if (!std::isfinite(x)) throw Error(ErrorCode::ProtocolError, "non-finite logits: " + frame.dump());
    return x;
  } catch (const json::exception&) {
    throw Error(ErrorCode::ProtocolError, "bad score frame: " + frame.dump());
  }
}

json ExternalOracle::request(TokenView seq) const {
  auto fut = submit(seq);
  return await(fut);
}

double ExternalOracle::score(TokenView seq) const { return log_odds_from(request(seq)); }

std::vector<double> ExternalOracle::score_batch(std::span<const TokenSeq> seqs) const {
  std::vector<std::future<json>> futures;
  futures.reserve(seqs.size());
  for (const auto& seq : seqs) futures.push_back(submit(seq));
  std::vector<double> out;
  out.reserve(seqs.size());
  for (auto& fut : futures) out.push_back(log_odds_from(await(fut)));
  return out;
}

}  // namespace slalom
