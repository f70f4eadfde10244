#include "deepview/app.hpp"

#include "deepview/errors.hpp"

#include "httplib.h"

#include <spdlog/spdlog.h>

#include <cmath>

namespace deepview {

using nlohmann::json;

namespace {

constexpr const char* json_type = "application/json";

void reply_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", message}}.dump(), json_type);
}

// Parses a request body as JSON; an empty body counts as {}.
std::optional<json> parse_body(const httplib::Request& req, httplib::Response& res) {
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        reply_error(res, 400, std::string("malformed JSON: ") + e.what());
        return std::nullopt;
    }
}

}  // namespace

ApiServer::ApiServer(Session& session, const std::string& static_dir)
    : session_(session), server_(std::make_unique<httplib::Server>()) {
    auto& svr = *server_;

    svr.Get("/api/state", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(session_.state().dump(), json_type);
    });

    svr.Get("/api/map", [this](const httplib::Request&, httplib::Response& res) {
        const auto snap = session_.snapshot();
        if (!snap) return reply_error(res, 409, "no map has been computed yet");
        res.set_content(snap->map_json, json_type);
    });

    svr.Get("/api/map.png", [this](const httplib::Request&, httplib::Response& res) {
        const auto snap = session_.snapshot();
        if (!snap) return reply_error(res, 409, "no map has been computed yet");
        res.set_content(std::string(snap->png.begin(), snap->png.end()), "image/png");
    });

    svr.Post("/api/probe", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req, res);
        if (!body) return;
        if (!body->is_object() || !body->contains("y")) return reply_error(res, 400, "expected {\"y\": [x, y]}");
        const json& y = body->at("y");
        if (!y.is_array() || y.size() != 2 || !y[0].is_number() || !y[1].is_number()) {
            return reply_error(res, 400, "y must be an array of two numbers");
        }
        const Point2 point(y[0].get<double>(), y[1].get<double>());
        if (!point.allFinite()) return reply_error(res, 400, "y must be finite");
        try {
            res.set_content(session_.probe(point).dump(), json_type);
        } catch (const NotReadyError& e) {
            reply_error(res, 409, e.what());
        } catch (const ValidationError& e) {
            reply_error(res, 400, e.what());
        }
    });

    svr.Post("/api/recompute", [this](const httplib::Request& req, httplib::Response& res) {
        const auto body = parse_body(req, res);
        if (!body) return;
        PipelineConfig config;
        try {
            config = merge_config(session_.config(), *body);
        } catch (const ValidationError& e) {
            return reply_error(res, 400, e.what());
        }
        if (!session_.start_recompute(config)) return reply_error(res, 409, "a recompute is already running");
        res.status = 202;
        res.set_content(json{{"status", "computing"}}.dump(), json_type);
    });

    svr.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            reply_error(res, 500, e.what());
        } catch (...) {
            reply_error(res, 500, "unknown error");
        }
    });

    if (!static_dir.empty() && !svr.set_mount_point("/", static_dir)) {
        throw ParameterError("static directory '" + static_dir + "' does not exist");
    }
}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind(const std::string& host, int port) {
    if (port == 0) return server_->bind_to_any_port(host);
    return server_->bind_to_port(host, port) ? port : -1;
}

void ApiServer::listen() { server_->listen_after_bind(); }

void ApiServer::wait_until_ready() const { server_->wait_until_ready(); }

void ApiServer::stop() {
    if (server_->is_running()) server_->stop();
}

}  // namespace deepview
