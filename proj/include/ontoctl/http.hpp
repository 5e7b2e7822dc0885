#pragma once

// Thin helpers over cpp-httplib shared by the remote classifier, embedding
// and chat-completion clients.

#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <string_view>

#include <httplib.h>

#include "ontoctl/error.hpp"

namespace ontoctl::http {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

inline Endpoint parse_url(std::string_view url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos)
    throw Error(ErrorKind::InvalidArgument, "URL needs a scheme: " + std::string(url));
  auto path_start = url.find('/', scheme_end + 3);
  Endpoint ep;
  ep.origin = std::string(url.substr(0, path_start));
  ep.path = path_start == std::string_view::npos ? "/" : std::string(url.substr(path_start));
  if (ep.origin.size() <= scheme_end + 3) throw Error(ErrorKind::InvalidArgument, "URL has no host: " + std::string(url));
  return ep;
}

struct PostResult {
  std::optional<int> status;  // set when a response arrived
  std::string body;
  ErrorKind failure = ErrorKind::ConnectionFailed;  // meaningful only without status
  std::string detail;
};

inline PostResult post_json(const Endpoint& ep, const std::string& body, std::chrono::milliseconds timeout,
                            const httplib::Headers& headers = {}) {
  httplib::Client client(ep.origin);
  auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  auto res = client.Post(ep.path, headers, body, "application/json");
  PostResult out;
  if (res) {
    out.status = res->status;
    out.body = res->body;
    return out;
  }
  auto err = res.error();
  out.detail = httplib::to_string(err);
  switch (err) {
    case httplib::Error::Read:
    case httplib::Error::Write:
    case httplib::Error::ConnectionTimeout:
      out.failure = ErrorKind::Timeout;
      break;
    default:
      out.failure = ErrorKind::ConnectionFailed;
  }
  return out;
}

inline std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

inline long env_long(const char* name, long fallback) {
  auto v = env(name);
  if (!v) return fallback;
  try {
    return std::stol(*v);
  } catch (const std::exception&) {
    throw Error(ErrorKind::InvalidArgument, std::string(name) + " is not an integer: " + *v);
  }
}

}  // namespace ontoctl::http
