#include "deepview/app.hpp"

#include "deepview/errors.hpp"

#include "httplib.h"

#include <spdlog/spdlog.h>

#include <array>
#include <cmath>

namespace deepview {

using nlohmann::json;

std::string to_string(Status status) {
    switch (status) {
        case Status::idle: return "idle";
        case Status::computing: return "computing";
        case Status::ready: return "ready";
        case Status::failed: return "failed";
    }
    return "unknown";
}

namespace {

struct StageWeight {
    const char* name;
    double start;
    double width;
};

// Share of the overall progress bar taken by each pipeline stage.
constexpr std::array<StageWeight, 5> stage_weights{{{"distances", 0.0, 0.6},
                                                     {"embedding", 0.6, 0.15},
                                                     {"inverse", 0.75, 0.1},
                                                     {"grid", 0.85, 0.1},
                                                     {"quality", 0.95, 0.05}}};

double overall_fraction(const std::string& stage, double fraction) {
    for (const auto& w : stage_weights) {
        if (stage == w.name) return w.start + w.width * std::clamp(fraction, 0.0, 1.0);
    }
    return 0.0;
}

}  // namespace

Session::Session(Dataset data, ClassifierHandle classifier, PipelineConfig config)
    : data_(std::move(data)), classifier_(std::move(classifier)), config_(std::move(config)) {
    if (!classifier_) throw ParameterError("session needs a classifier");
    validate(data_, classifier_->class_count());
    if (data_.dim() != classifier_->input_dim()) throw DimensionError("data and classifier dimensions differ");
    config_.validate();
}

Session::~Session() {
    if (worker_.joinable()) worker_.join();
}

void Session::run_and_publish(const PipelineConfig& config) {
    std::shared_ptr<const DistanceMatrix> cached;
    {
        std::lock_guard lock(mutex_);
        cached = distances_;
    }
    RunHooks hooks;
    hooks.cached_distances = cached.get();
    hooks.progress = [this](const std::string& stage, double fraction) {
        std::lock_guard lock(mutex_);
        const double overall = overall_fraction(stage, fraction);
        stage_ = stage;
        fraction_ = std::max(fraction_, overall);
    };
    try {
        PipelineResult result = run(data_, *classifier_, config, hooks);
        auto snap = std::make_shared<Snapshot>();
        snap->config = config;
        snap->map = std::move(result.map);
        snap->inverse = std::move(result.inverse);
        snap->map_json = to_json(snap->map).dump();
        snap->png = render_png(snap->map);
        auto distances = std::make_shared<const DistanceMatrix>(std::move(result.distances));
        std::lock_guard lock(mutex_);
        snapshot_ = std::move(snap);
        distances_ = std::move(distances);
        config_ = config;
        status_ = Status::ready;
        stage_.clear();
        fraction_ = 1.0;
        reason_.clear();
    } catch (const std::exception& e) {
        spdlog::error("pipeline run failed: {}", e.what());
        std::lock_guard lock(mutex_);
        status_ = Status::failed;
        reason_ = e.what();
    }
}

void Session::compute(const PipelineConfig& config) {
    config.validate();
    {
        std::unique_lock lock(mutex_);
        idle_cv_.wait(lock, [this] { return !busy_; });
        busy_ = true;
        status_ = Status::computing;
        stage_ = "distances";
        fraction_ = 0.0;
    }
    run_and_publish(config);
    {
        std::lock_guard lock(mutex_);
        busy_ = false;
    }
    idle_cv_.notify_all();
}

bool Session::start_recompute(const PipelineConfig& config) {
    config.validate();
    {
        std::lock_guard lock(mutex_);
        if (busy_) return false;
        busy_ = true;
        status_ = Status::computing;
        stage_ = "distances";
        fraction_ = 0.0;
    }
    // The previous worker has already cleared busy_, so this join is short.
    if (worker_.joinable()) worker_.join();
    worker_ = std::jthread([this, config] {
        run_and_publish(config);
        {
            std::lock_guard lock(mutex_);
            busy_ = false;
        }
        idle_cv_.notify_all();
    });
    return true;
}

void Session::wait() const {
    std::unique_lock lock(mutex_);
    idle_cv_.wait(lock, [this] { return !busy_; });
}

Status Session::status() const {
    std::lock_guard lock(mutex_);
    return status_;
}

std::shared_ptr<const Snapshot> Session::snapshot() const {
    std::lock_guard lock(mutex_);
    return snapshot_;
}

PipelineConfig Session::config() const {
    std::lock_guard lock(mutex_);
    return config_;
}

json Session::state() const {
    std::lock_guard lock(mutex_);
    json j{{"status", to_string(status_)},
           {"fraction", fraction_},
           {"has_map", snapshot_ != nullptr},
           {"config", to_json(config_)},
           {"data",
            {{"n", data_.size()},
             {"dim", data_.dim()},
             {"labelled", data_.labels.has_value()},
             {"feature_names", data_.feature_names},
             {"image_shape", data_.image_shape ? json(*data_.image_shape) : json(nullptr)}}},
           {"classifier",
            {{"id", classifier_->id()},
             {"kind", to_string(classifier_->kind())},
             {"classes", classifier_->class_count()}}}};
    j["stage"] = status_ == Status::computing ? json(stage_) : json(nullptr);
    j["reason"] = status_ == Status::failed ? json(reason_) : json(nullptr);
    j["quality"] = snapshot_ ? to_json(snapshot_->map.quality) : json(nullptr);
    return j;
}

json Session::probe(const Point2& y) const {
    std::shared_ptr<const Snapshot> snap;
    {
        std::lock_guard lock(mutex_);
        if (status_ != Status::ready) throw NotReadyError("session is not ready");
        snap = snapshot_;
    }
    const ProbeResult r = deepview::probe(snap->inverse, *classifier_, y);
    json j = to_json(r);
    if (data_.image_shape) {
        const auto png = render_sample_png(r.x, *data_.image_shape);
        j["image_png_base64"] = httplib::detail::base64_encode(std::string(png.begin(), png.end()));
    }
    return j;
}

}  // namespace deepview
