#pragma once

#include "deepview/classifier.hpp"
#include "deepview/errors.hpp"
#include "deepview/pipeline.hpp"
#include "deepview/types.hpp"

#include "json.hpp"

#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace deepview {

/// Everything one finished pipeline run serves. Never modified after it is
/// published.
struct Snapshot {
    PipelineConfig config;
    DecisionMap map;
    InverseProjection inverse;
    std::string map_json;
    std::vector<std::uint8_t> png;
};

enum class Status { idle, computing, ready, failed };

/// A request that needs a finished map arrived before one was available.
class NotReadyError : public Error {
public:
    using Error::Error;
};

std::string to_string(Status status);

/// One dataset and classifier plus the most recent map. Recomputations run on
/// a background thread; readers keep seeing the previous snapshot until the
/// new one is complete.
class Session {
public:
    Session(Dataset data, ClassifierHandle classifier, PipelineConfig config);
    ~Session();

    Session(const Session&) = delete;
    Session& operator=(const Session&) = delete;

    /// Runs the pipeline on the calling thread and publishes the result.
    void compute(const PipelineConfig& config);

    /// Starts a background run. Returns false if one is already running.
    bool start_recompute(const PipelineConfig& config);

    /// Blocks until no background run is active.
    void wait() const;

    Status status() const;
    nlohmann::json state() const;
    std::shared_ptr<const Snapshot> snapshot() const;
    PipelineConfig config() const;

    /// Probe response for y. Throws NotReadyError unless the status is ready.
    nlohmann::json probe(const Point2& y) const;

    const Dataset& data() const { return data_; }
    const Classifier& classifier() const { return *classifier_; }

private:
    void run_and_publish(const PipelineConfig& config);

    Dataset data_;
    ClassifierHandle classifier_;

    mutable std::mutex mutex_;
    mutable std::condition_variable idle_cv_;
    PipelineConfig config_;
    Status status_ = Status::idle;
    std::string stage_;
    double fraction_ = 0.0;
    std::string reason_;
    bool busy_ = false;
    std::shared_ptr<const Snapshot> snapshot_;
    std::shared_ptr<const DistanceMatrix> distances_;
    std::jthread worker_;
};

/// HTTP front end of a Session:
///   GET  /api/state, /api/map, /api/map.png
///   POST /api/probe {"y": [x, y]}, /api/recompute {partial config}
/// plus static files from `static_dir` when given.
class ApiServer {
public:
    ApiServer(Session& session, const std::string& static_dir = {});
    ~ApiServer();

    /// Binds to `port` (0 picks a free port) and returns the bound port, or
    /// -1 on failure.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called.
    void listen();
    /// Blocks until listen() is accepting connections.
    void wait_until_ready() const;
    void stop();

private:
    Session& session_;
    std::unique_ptr<httplib::Server> server_;
};

/// Entry point of the `deepview` command line tool. Returns 0 on success, 2
/// on usage or validation errors and 1 on runtime errors.
int cli_main(int argc, char** argv);

}  // namespace deepview
