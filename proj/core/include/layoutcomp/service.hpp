#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "layoutcomp/corpus.hpp"
#include "layoutcomp/decode.hpp"
#include "layoutcomp/model.hpp"

namespace httplib {
class Server;
}

namespace layoutcomp {

struct ServiceConfig {
  int timeout_ms = 5000;
  int max_in_flight = 4;  // concurrent decodes before answering 503
  int max_candidates = 5;
  int max_beam_width = 16;
  int workers = 4;  // HTTP worker threads
};

struct HttpResponse {
  int status = 200;
  std::string body;  // JSON
};

/// Request handling over one immutable model snapshot. Handlers are safe to call
/// concurrently; none of them mutates shared state other than the in-flight counter.
class CompletionService {
 public:
  explicit CompletionService(TypeManifest manifest, ServiceConfig cfg = {});

  /// Loads the checkpoint and makes the service ready. Throws CheckpointError. Requests are
  /// limited to the traversal orders recorded in the checkpoint's training metadata, if any.
  void load(const std::string& checkpoint_path);
  /// Serves an already constructed model under the given hash. The first order is the
  /// default for requests that name none.
  void load(std::unique_ptr<DecoderModel<float>> model, std::string hash,
            std::vector<TraversalOrder> orders = {TraversalOrder::kDfs, TraversalOrder::kBfs});
  bool ready() const;

  HttpResponse handle_complete(const std::string& body);
  HttpResponse handle_model() const;
  HttpResponse handle_healthz() const;

  const ServiceConfig& config() const { return cfg_; }
  const TypeManifest& manifest() const { return manifest_; }

 private:
  struct Snapshot {
    std::unique_ptr<DecoderModel<float>> model;
    std::string hash;
    std::vector<TraversalOrder> orders;
  };
  std::shared_ptr<Snapshot> snapshot() const;

  TypeManifest manifest_;
  ServiceConfig cfg_;
  mutable std::mutex mu_;
  std::shared_ptr<Snapshot> snapshot_;
  std::shared_ptr<std::atomic<int>> in_flight_;
};

/// HTTP front end: POST /complete, GET /model, GET /healthz.
class HttpServer {
 public:
  explicit HttpServer(CompletionService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to `port` (0 picks a free port) and returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop().
  void serve();
  void stop();
  void wait_until_ready() const;

 private:
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace layoutcomp
