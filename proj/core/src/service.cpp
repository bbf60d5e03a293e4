#include "layoutcomp/service.hpp"

#include <chrono>
#include <algorithm>
#include <future>
#include <optional>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "layoutcomp/checkpoint.hpp"

namespace layoutcomp {

using nlohmann::json;

namespace {

HttpResponse error_response(int status, const std::string& message) {
  return HttpResponse{status, json{{"error", message}}.dump()};
}

class BadRequest : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CompletionRequest {
  LayoutTree tree;
  std::optional<TraversalOrder> order;
  DecodeConfig decode;
};

int int_field(const json& j, const char* key, int fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number_integer()) throw BadRequest(std::string(key) + ": expected an integer");
  return it->get<int>();
}

CompletionRequest parse_request(const std::string& body, const TypeManifest& manifest, const ServiceConfig& cfg) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw BadRequest(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw BadRequest("request: expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key != "root" && key != "order" && key != "numCandidates" && key != "strategy" && key != "beamWidth") {
      throw BadRequest(key + ": unknown field");
    }
  }
  CompletionRequest r;
  auto root = j.find("root");
  if (root == j.end()) throw BadRequest("root: missing");
  try {
    r.tree = tree_from_json(root->dump(), manifest, false);
  } catch (const ParseError& e) {
    throw BadRequest(e.what());
  }
  if (auto o = j.find("order"); o != j.end()) {
    if (!o->is_string() || (*o != "bfs" && *o != "dfs")) throw BadRequest("order: expected \"bfs\" or \"dfs\"");
    r.order = parse_order(o->get<std::string>());
  }
  if (auto s = j.find("strategy"); s != j.end()) {
    if (!s->is_string() || (*s != "greedy" && *s != "beam")) {
      throw BadRequest("strategy: expected \"greedy\" or \"beam\"");
    }
    r.decode.strategy = parse_strategy(s->get<std::string>());
  }
  r.decode.num_candidates = int_field(j, "numCandidates", 1);
  if (r.decode.num_candidates < 1 || r.decode.num_candidates > cfg.max_candidates) {
    throw BadRequest("numCandidates: expected 1.." + std::to_string(cfg.max_candidates));
  }
  const int default_width = r.decode.strategy == Strategy::kBeam ? std::max(4, r.decode.num_candidates) : 1;
  r.decode.beam_width = int_field(j, "beamWidth", default_width);
  if (r.decode.beam_width < 1 || r.decode.beam_width > cfg.max_beam_width) {
    throw BadRequest("beamWidth: expected 1.." + std::to_string(cfg.max_beam_width));
  }
  if (r.decode.strategy == Strategy::kBeam && r.decode.beam_width < r.decode.num_candidates) {
    throw BadRequest("beamWidth: must be at least numCandidates");
  }
  try {
    validate_tree(r.tree);
  } catch (const ValidationError& e) {
    throw BadRequest(std::string("root: ") + std::string(to_string(e.kind())) + ": " + e.what());
  }
  return r;
}

json candidate_json(const Completion& c, const TypeManifest& manifest) {
  std::vector<bool> predicted(static_cast<size_t>(c.tree.size()));
  for (int i = 0; i < c.tree.size(); ++i) predicted[static_cast<size_t>(i)] = c.predicted(i);
  return json{{"root", json::parse(tree_to_json(c.tree, manifest, &predicted))},
              {"logProb", c.log_prob},
              {"newNodes", c.new_node_count},
              {"budgetExhausted", c.budget_exhausted},
              {"repairs", c.repairs}};
}

json order_names(const std::vector<TraversalOrder>& orders) {
  json out = json::array();
  for (auto o : orders) out.push_back(std::string(to_string(o)));
  return out;
}

}  // namespace

CompletionService::CompletionService(TypeManifest manifest, ServiceConfig cfg)
    : manifest_(std::move(manifest)), cfg_(cfg), in_flight_(std::make_shared<std::atomic<int>>(0)) {}

void CompletionService::load(const std::string& checkpoint_path) {
  auto ck = load_checkpoint(checkpoint_path);
  std::vector<TraversalOrder> orders{TraversalOrder::kDfs, TraversalOrder::kBfs};
  try {
    const auto meta = json::parse(ck.meta_json);
    if (meta.contains("train") && meta["train"].contains("orders")) {
      if (!meta["train"]["orders"].is_array()) throw std::invalid_argument("orders is not an array");
      orders.clear();
      for (const auto& o : meta["train"]["orders"]) orders.push_back(parse_order(o.get<std::string>()));
    }
  } catch (const std::exception& e) {
    throw CheckpointError(checkpoint_path + ": bad training metadata: " + e.what());
  }
  load(std::move(ck.model), ck.hash, std::move(orders));
}

void CompletionService::load(std::unique_ptr<DecoderModel<float>> model, std::string hash,
                             std::vector<TraversalOrder> orders) {
  if (model->config().num_types != manifest_.size()) {
    throw CheckpointError("model has " + std::to_string(model->config().num_types) + " types but the manifest has " +
                          std::to_string(manifest_.size()));
  }
  if (orders.empty()) throw CheckpointError("model has no traversal order to serve");
  auto snap = std::make_shared<Snapshot>();
  snap->model = std::move(model);
  snap->hash = std::move(hash);
  snap->orders = std::move(orders);
  std::lock_guard lock(mu_);
  snapshot_ = std::move(snap);
}

std::shared_ptr<CompletionService::Snapshot> CompletionService::snapshot() const {
  std::lock_guard lock(mu_);
  return snapshot_;
}

bool CompletionService::ready() const { return snapshot() != nullptr; }

HttpResponse CompletionService::handle_healthz() const {
  if (!ready()) return error_response(503, "model not loaded");
  return HttpResponse{200, json{{"status", "ok"}}.dump()};
}

HttpResponse CompletionService::handle_model() const {
  auto snap = snapshot();
  if (!snap) return error_response(503, "model not loaded");
  const auto& mc = snap->model->config();
  json j{{"variant", std::string(to_string(mc.variant))},
         {"checkpointHash", snap->hash},
         {"grid", {{"width", kGridWidth}, {"height", kGridHeight}}},
         {"vocab", {{"c", mc.c_vocab()}, {"t", kTerminalVocab}, {"x", kXVocab}, {"y", kYVocab}}},
         {"numTypes", mc.num_types},
         {"types", manifest_.names()},
         {"orders", order_names(snap->orders)},
         {"maxCandidates", cfg_.max_candidates},
         {"config", json::parse(mc.to_json())}};
  return HttpResponse{200, j.dump()};
}

HttpResponse CompletionService::handle_complete(const std::string& body) {
  const auto start = std::chrono::steady_clock::now();
  auto snap = snapshot();
  if (!snap) return error_response(503, "model not loaded");

  CompletionRequest req;
  try {
    req = parse_request(body, manifest_, cfg_);
  } catch (const BadRequest& e) {
    return error_response(400, e.what());
  }

  const auto order = req.order.value_or(snap->orders.front());
  if (std::find(snap->orders.begin(), snap->orders.end(), order) == snap->orders.end()) {
    return error_response(422, "OrderMismatch: the model was trained on " + std::string(to_string(snap->orders.front())) +
                                   " prefixes, not " + std::string(to_string(order)));
  }

  if (in_flight_->fetch_add(1) >= cfg_.max_in_flight) {
    in_flight_->fetch_sub(1);
    return error_response(503, "overloaded: too many completions in flight");
  }
  // The decode runs on its own thread so a slow request can be abandoned at the deadline;
  // the snapshot and counter stay alive until it finishes.
  auto partial = std::make_shared<PartialTree>(extract_partial(req.tree, 1.0, order));
  auto promise = std::make_shared<std::promise<std::vector<Completion>>>();
  auto result = promise->get_future();
  std::thread([snap, partial, cfg = req.decode, promise, counter = in_flight_]() {
    std::vector<Completion> out;
    std::exception_ptr error;
    try {
      out = complete(*partial, *snap->model, cfg);
    } catch (...) {
      error = std::current_exception();
    }
    // Free the slot before the caller can observe the result.
    counter->fetch_sub(1);
    if (error) {
      promise->set_exception(error);
    } else {
      promise->set_value(std::move(out));
    }
  }).detach();

  if (result.wait_for(std::chrono::milliseconds(cfg_.timeout_ms)) != std::future_status::ready) {
    return error_response(503, "timeout: completion took longer than " + std::to_string(cfg_.timeout_ms) + " ms");
  }
  std::vector<Completion> completions;
  try {
    completions = result.get();
  } catch (const PrefixViolation& e) {
    return error_response(422, std::string("PrefixViolation: ") + e.what());
  } catch (const ValidationError& e) {
    return error_response(400, std::string("root: ") + std::string(to_string(e.kind())) + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    return error_response(400, e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }

  json candidates = json::array();
  for (const auto& c : completions) candidates.push_back(candidate_json(c, manifest_));
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  json out{{"root", candidates.at(0).at("root")},
           {"logProb", completions.front().log_prob},
           {"candidates", std::move(candidates)},
           {"modelInfo", {{"variant", std::string(to_string(snap->model->config().variant))}, {"checkpointHash", snap->hash}}},
           {"timingMs", ms}};
  return HttpResponse{200, out.dump()};
}

// ---- HTTP ---------------------------------------------------------------------

HttpServer::HttpServer(CompletionService& service) : server_(std::make_unique<httplib::Server>()) {
  const int workers = std::max(1, service.config().workers);
  server_->new_task_queue = [workers] { return new httplib::ThreadPool(static_cast<size_t>(workers)); };
  auto reply = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  server_->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server_->Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server_->Post("/complete", [&service, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, service.handle_complete(req.body));
  });
  server_->Get("/model", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.handle_model());
  });
  server_->Get("/healthz", [&service, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service.handle_healthz());
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

void HttpServer::serve() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_->is_running()) server_->stop();
}

void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace layoutcomp
